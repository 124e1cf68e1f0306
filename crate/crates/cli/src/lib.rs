//! Batch runner, ablation driver and suite tooling.
//!
//! Output layout of `run` under the output directory:
//! `traces/run{r}/{episode}.jsonl`, `outcomes.json`, `report.json` and
//! `report.txt`. `ablate` writes one such tree per variant plus
//! `ablation.json` and `ablation.txt` at the top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stagenav_core::metrics::{render_table, MetricReport};
use stagenav_core::suite::{generate_suite, validate_suite, Diagnostic, SuiteSpec};
use thiserror::Error;

pub mod batch;
pub mod cli;
pub mod config;
pub mod inputs;

pub use batch::{run_batch, BatchResult, BatchSpec};
pub use config::{parse_variant, BackendSpec, RunConfig, VARIANTS};

pub const ABLATION_SCHEMA: &str = "stagenav.ablation/1";
pub const SUITE_SCHEMA: &str = "stagenav.suite/1";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {message}", file.display())]
    Schema { file: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{} input violation(s):\n{}", .0.len(), format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("episode {0}: {1}")]
    Episode(String, String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| format!("{}: {}", d.location, d.message))
        .collect::<Vec<_>>()
        .join("\n")
}

/// What a command left behind, for the exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    /// Aborted episodes with `allow_failures` unset.
    Aborted(usize),
    Violations(usize),
}

fn write_batch(dir: &Path, result: &BatchResult, label: &str) -> Result<(), HarnessError> {
    for e in &result.episodes {
        let path = dir
            .join("traces")
            .join(format!("run{}", e.run))
            .join(format!("{}.jsonl", e.episode_id));
        inputs::write_text(&path, &e.trace.to_jsonl())?;
    }
    inputs::write_json(&dir.join("outcomes.json"), &result.outcomes_json())?;
    inputs::write_json(&dir.join("report.json"), &result.report)?;
    inputs::write_text(
        &dir.join("report.txt"),
        &render_table(&[(label.to_string(), &result.report)]),
    )
}

fn batch_spec(config: &RunConfig) -> BatchSpec {
    BatchSpec {
        backend: config.backend.clone(),
        controller: config.controller,
        runs: config.runs,
    }
}

fn aborted_outcome(config: &RunConfig, aborted: usize) -> Outcome {
    if aborted > 0 && !config.allow_failures {
        Outcome::Aborted(aborted)
    } else {
        Outcome::Clean
    }
}

pub fn cmd_run(config: &RunConfig) -> Result<(Outcome, MetricReport), HarnessError> {
    config.validate()?;
    let scenes = inputs::load_scenes(&config.scenes)?;
    let episodes = inputs::load_episodes(&config.episodes)?;
    let result = run_batch(&batch_spec(config), &scenes, &episodes, config.parallelism)?;
    let label = config.controller.ablation.flag_names().join("+");
    write_batch(&config.out, &result, if label.is_empty() { "full" } else { &label })?;
    Ok((aborted_outcome(config, result.aborted()), result.report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub flags: Vec<String>,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema: String,
    pub inputs_digest: String,
    pub rows: Vec<AblationRow>,
}

/// Runs each variant over the same episodes and seeds. Rows keep the given
/// order.
pub fn cmd_ablate(config: &RunConfig, variants: &[String]) -> Result<(Outcome, AblationReport), HarnessError> {
    if variants.is_empty() {
        return Err(HarnessError::Config("at least one variant is required".into()));
    }
    let parsed = variants
        .iter()
        .map(|v| parse_variant(v).map(|a| (v.clone(), a)))
        .collect::<Result<Vec<_>, _>>()?;
    config.validate()?;
    let scenes = inputs::load_scenes(&config.scenes)?;
    let episodes = inputs::load_episodes(&config.episodes)?;
    let mut rows = Vec::new();
    let mut aborted = 0;
    for (name, ablation) in parsed {
        let mut spec = batch_spec(config);
        spec.controller.ablation = ablation;
        let result = run_batch(&spec, &scenes, &episodes, config.parallelism)?;
        write_batch(&config.out.join(&name), &result, &name)?;
        aborted += result.aborted();
        rows.push(AblationRow {
            variant: name,
            flags: ablation.flag_names().iter().map(|s| s.to_string()).collect(),
            report: result.report,
        });
    }
    let report = AblationReport {
        schema: ABLATION_SCHEMA.into(),
        inputs_digest: inputs::inputs_digest(&scenes, &episodes),
        rows,
    };
    inputs::write_json(&config.out.join("ablation.json"), &report)?;
    let table: Vec<(String, &MetricReport)> = report
        .rows
        .iter()
        .map(|r| (r.variant.clone(), &r.report))
        .collect();
    inputs::write_text(&config.out.join("ablation.txt"), &render_table(&table))?;
    Ok((aborted_outcome(config, aborted), report))
}

/// Writes `scenes/<id>.json`, `episodes.json` and `suite.json` under `out`.
pub fn cmd_gen_suite(
    spec: &SuiteSpec,
    controller: &stagenav_core::controller::ControllerConfig,
    out: &Path,
) -> Result<usize, HarnessError> {
    let suite = generate_suite(spec, controller).map_err(|e| HarnessError::Config(e.to_string()))?;
    for scene in &suite.scenes {
        inputs::write_json(&out.join("scenes").join(format!("{}.json", scene.id())), &scene.to_file())?;
    }
    inputs::write_json(&out.join("episodes.json"), &suite.episodes)?;
    inputs::write_json(
        &out.join("suite.json"),
        &serde_json::json!({ "schema": SUITE_SCHEMA, "spec": spec }),
    )?;
    Ok(suite.episodes.len())
}

/// Every problem found, each with a location. Unreadable scene files are
/// reported as diagnostics rather than aborting the check.
pub fn cmd_validate(
    scenes_dir: &Path,
    episodes_path: &Path,
    controller: &stagenav_core::controller::ControllerConfig,
) -> Result<Vec<Diagnostic>, HarnessError> {
    let mut diagnostics = Vec::new();
    let mut scenes = inputs::SceneSet::new();
    for path in inputs::scene_files(scenes_dir)? {
        match inputs::load_scene(&path) {
            Ok(s) => {
                scenes.insert(s.id().to_string(), std::sync::Arc::new(s));
            }
            Err(e) => diagnostics.push(Diagnostic {
                location: path.display().to_string(),
                message: match e {
                    HarnessError::Schema { message, .. } => message,
                    other => other.to_string(),
                },
            }),
        }
    }
    let episodes = match inputs::load_episodes(episodes_path) {
        Ok(e) => e,
        Err(HarnessError::Schema { file, message }) => {
            diagnostics.push(Diagnostic {
                location: file.display().to_string(),
                message,
            });
            return Ok(diagnostics);
        }
        Err(e) => return Err(e),
    };
    diagnostics.extend(validate_suite(&scenes, &episodes, controller));
    Ok(diagnostics)
}
