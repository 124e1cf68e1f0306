use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stagenav_core::backend::{ModelBackend, Oracle, OracleKnowledge, RemoteBackend};
use stagenav_core::controller::{run_episode, ControllerConfig, ControllerError};
use stagenav_core::metrics::{aggregate, outcome_from_trace, EpisodeOutcome, MetricReport};
use stagenav_core::sim::Episode;
use stagenav_core::suite::input_diagnostics;
use stagenav_core::trace::Trace;

use crate::config::BackendSpec;
use crate::inputs::{inputs_digest, SceneSet};
use crate::HarnessError;

pub const OUTCOMES_SCHEMA: &str = "stagenav.outcomes/1";

/// Everything that determines a batch's results. Paths and parallelism
/// are deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub backend: BackendSpec,
    pub controller: ControllerConfig,
    pub runs: u32,
}

pub struct EpisodeResult {
    pub run: u32,
    pub episode_id: String,
    pub trace: Trace,
    pub outcome: EpisodeOutcome,
    pub error: Option<String>,
}

pub struct BatchResult {
    pub report: MetricReport,
    pub episodes: Vec<EpisodeResult>,
}

impl BatchResult {
    pub fn aborted(&self) -> usize {
        self.report.aborted
    }

    pub fn outcomes_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": OUTCOMES_SCHEMA,
            "outcomes": self.episodes.iter().map(|e| serde_json::json!({
                "run": e.run,
                "outcome": e.outcome,
                "error": e.error,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Per-(run, episode) noise seed, independent of scheduling order.
pub fn episode_seed(base: u64, run: u32, episode_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{base}:{run}:{episode_id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

enum Backends {
    Oracle { rate: Option<(f64, u64)> },
    Remote(Arc<RemoteBackend>),
}

impl Backends {
    fn resolve(spec: &BackendSpec) -> Result<Self, HarnessError> {
        Ok(match spec {
            BackendSpec::Oracle => Backends::Oracle { rate: None },
            BackendSpec::NoisyOracle { rate, seed } => Backends::Oracle {
                rate: Some((*rate, *seed)),
            },
            BackendSpec::Remote => Backends::Remote(Arc::new(
                RemoteBackend::from_env().map_err(|e| HarnessError::Config(e.to_string()))?,
            )),
        })
    }

    fn for_episode(
        &self,
        run: u32,
        episode: &Episode,
        scene: &Arc<stagenav_core::sim::SceneMap>,
        config: &ControllerConfig,
    ) -> Result<Arc<dyn ModelBackend>, HarnessError> {
        match self {
            Backends::Remote(r) => Ok(r.clone()),
            Backends::Oracle { rate } => {
                let knowledge = OracleKnowledge::from_episode(
                    scene.clone(),
                    episode,
                    config.success_threshold,
                    config.sim,
                );
                Ok(match rate {
                    None => Arc::new(Oracle::new(knowledge)),
                    Some((rate, seed)) => Arc::new(
                        Oracle::noisy(knowledge, *rate, episode_seed(*seed, run, &episode.id))
                            .map_err(|e| HarnessError::Config(e.to_string()))?,
                    ),
                })
            }
        }
    }
}

/// Runs every (run, episode) pair on a pool of `parallelism` threads.
/// Results come back in (run, episode) order regardless of scheduling.
pub fn run_batch(
    spec: &BatchSpec,
    scenes: &SceneSet,
    episodes: &[Episode],
    parallelism: usize,
) -> Result<BatchResult, HarnessError> {
    spec.controller
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let diagnostics = input_diagnostics(scenes, episodes, spec.controller.success_threshold);
    if !diagnostics.is_empty() {
        return Err(HarnessError::Invalid(diagnostics));
    }
    let backends = Backends::resolve(&spec.backend)?;
    let jobs: Vec<(u32, &Episode)> = (0..spec.runs)
        .flat_map(|r| episodes.iter().map(move |e| (r, e)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<EpisodeResult, HarnessError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(run, episode)| {
                let scene = &scenes[&episode.scene_id];
                let backend = backends.for_episode(run, episode, scene, &spec.controller)?;
                let (trace, error) = match run_episode(episode, scene, backend.as_ref(), &spec.controller) {
                    Ok(r) => (r.trace, None),
                    Err(ControllerError::Backend { partial, error, step }) => {
                        tracing::warn!(episode = %episode.id, run, step, %error, "episode aborted");
                        (*partial, Some(error.to_string()))
                    }
                    Err(e) => return Err(HarnessError::Episode(episode.id.clone(), e.to_string())),
                };
                let outcome = outcome_from_trace(
                    &trace,
                    scene,
                    episode,
                    spec.controller.success_threshold,
                    error.is_some(),
                )
                .map_err(|e| HarnessError::Episode(episode.id.clone(), e.to_string()))?;
                Ok(EpisodeResult {
                    run,
                    episode_id: episode.id.clone(),
                    trace,
                    outcome,
                    error,
                })
            })
            .collect()
    });
    let results: Vec<EpisodeResult> = results.into_iter().collect::<Result<_, _>>()?;

    let mut per_run: Vec<Vec<EpisodeOutcome>> = vec![Vec::new(); spec.runs as usize];
    for r in &results {
        per_run[r.run as usize].push(r.outcome.clone());
    }
    let mut report = aggregate(&per_run).map_err(|e| HarnessError::Config(e.to_string()))?;
    report.config = Some(serde_json::json!({
        "batch": spec,
        "inputs_digest": inputs_digest(scenes, episodes),
    }));
    Ok(BatchResult {
        report,
        episodes: results,
    })
}
