use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stagenav_core::suite::SuiteSpec;

use crate::config::{BackendSpec, RunConfig};
use crate::{cmd_ablate, cmd_gen_suite, cmd_run, cmd_validate, format_diagnostics, HarnessError, Outcome};

#[derive(Debug, Parser)]
#[command(name = "stagenav", version, about = "Stage-structured navigation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch of episodes and write traces and a metric report.
    Run(RunArgs),
    /// Run the same batch under several ablation variants.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variant names or `+`-joined flag sets.
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<String>,
    },
    /// Generate a synthetic corridor-and-rooms suite.
    GenSuite(GenArgs),
    /// Check scenes and episodes, including oracle completability.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendKind {
    Oracle,
    NoisyOracle,
    Remote,
}

/// Every field is optional so that flag > file > default can be applied.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_failures: Option<bool>,

    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub max_total_steps: Option<u32>,
    #[arg(long)]
    pub max_actions: Option<usize>,
    #[arg(long)]
    pub sttb_capacity: Option<usize>,
    #[arg(long)]
    pub success_threshold: Option<f64>,
    #[arg(long)]
    pub parse_failure_cap: Option<u32>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub step_length: Option<f64>,
    #[arg(long)]
    pub turn_angle: Option<f64>,
    #[arg(long)]
    pub fov: Option<f64>,
    #[arg(long)]
    pub view_range: Option<f64>,

    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub disable_dgmf: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub disable_isgr: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub disable_dual_fov: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub disable_transition: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub execution_only: Option<bool>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.scenes, self.scenes.clone());
        set(&mut c.episodes, self.episodes.clone());
        set(&mut c.runs, self.runs);
        set(&mut c.parallelism, self.parallelism);
        set(&mut c.out, self.out.clone());
        set(&mut c.allow_failures, self.allow_failures);

        let (file_rate, file_seed) = match c.backend {
            BackendSpec::NoisyOracle { rate, seed } => (Some(rate), Some(seed)),
            _ => (None, None),
        };
        let kind = self.backend.or(match c.backend {
            BackendSpec::Oracle => Some(BackendKind::Oracle),
            BackendSpec::NoisyOracle { .. } => Some(BackendKind::NoisyOracle),
            BackendSpec::Remote => Some(BackendKind::Remote),
        });
        c.backend = match kind.unwrap_or(BackendKind::Oracle) {
            BackendKind::Oracle => BackendSpec::Oracle,
            BackendKind::Remote => BackendSpec::Remote,
            BackendKind::NoisyOracle => BackendSpec::NoisyOracle {
                rate: self.noise_rate.or(file_rate).ok_or_else(|| {
                    HarnessError::Config("noisy-oracle needs --noise-rate or backend.rate".into())
                })?,
                seed: self.noise_seed.or(file_seed).unwrap_or(0),
            },
        };
        if !matches!(c.backend, BackendSpec::NoisyOracle { .. })
            && (self.noise_rate.is_some() || self.noise_seed.is_some())
        {
            return Err(HarnessError::Config(
                "--noise-rate and --noise-seed apply only to the noisy-oracle backend".into(),
            ));
        }

        let k = &mut c.controller;
        set(&mut k.horizon, self.horizon);
        set(&mut k.max_total_steps, self.max_total_steps);
        set(&mut k.max_actions, self.max_actions);
        set(&mut k.sttb_capacity, self.sttb_capacity);
        set(&mut k.success_threshold, self.success_threshold);
        set(&mut k.parse_failure_cap, self.parse_failure_cap);
        set(&mut k.max_output_tokens, self.max_output_tokens);
        set(&mut k.temperature, self.temperature);
        set(&mut k.sim.step_length, self.step_length);
        set(&mut k.sim.turn_angle, self.turn_angle);
        set(&mut k.sim.fov, self.fov);
        set(&mut k.sim.view_range, self.view_range);
        set(&mut k.ablation.disable_dgmf, self.disable_dgmf);
        set(&mut k.ablation.disable_isgr, self.disable_isgr);
        set(&mut k.ablation.disable_dual_fov, self.disable_dual_fov);
        set(&mut k.ablation.disable_transition, self.disable_transition);
        set(&mut k.ablation.execution_only, self.execution_only);
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long, default_value = "suite")]
    pub out: PathBuf,
    /// TOML suite specification.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub subgoals_min: Option<usize>,
    #[arg(long)]
    pub subgoals_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    #[arg(long)]
    pub rooms: Option<usize>,
    #[arg(long)]
    pub landmarks_per_room: Option<usize>,
    #[arg(long)]
    pub episodes_per_scene: Option<usize>,
}

impl GenArgs {
    pub fn resolve(&self) -> Result<SuiteSpec, HarnessError> {
        let mut s = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                toml::from_str(&text).map_err(|e| HarnessError::Schema {
                    file: path.clone(),
                    message: e.to_string(),
                })?
            }
            None => SuiteSpec::default(),
        };
        set(&mut s.episodes, self.episodes);
        set(&mut s.subgoals_min, self.subgoals_min);
        set(&mut s.subgoals_max, self.subgoals_max);
        set(&mut s.seed, self.seed);
        set(&mut s.width, self.width);
        set(&mut s.height, self.height);
        set(&mut s.cell_size, self.cell_size);
        set(&mut s.rooms, self.rooms);
        set(&mut s.landmarks_per_room, self.landmarks_per_room);
        set(&mut s.episodes_per_scene, self.episodes_per_scene);
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Suite directory holding `scenes/` and `episodes.json`.
    pub suite: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    /// TOML run configuration supplying controller settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURES: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

fn exit_for(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::Clean => EXIT_OK,
        Outcome::Aborted(n) => {
            eprintln!("{n} episode(s) aborted; pass --allow-failures to accept");
            EXIT_FAILURES
        }
        Outcome::Violations(_) => EXIT_FAILURES,
    }
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let config = args.resolve()?;
            let (outcome, report) = cmd_run(&config)?;
            print!(
                "{}",
                stagenav_core::metrics::render_table(&[("run".into(), &report)])
            );
            Ok(exit_for(outcome))
        }
        Command::Ablate { run, variants } => {
            let config = run.resolve()?;
            let (outcome, report) = cmd_ablate(&config, &variants)?;
            let rows: Vec<_> = report
                .rows
                .iter()
                .map(|r| (r.variant.clone(), &r.report))
                .collect();
            print!("{}", stagenav_core::metrics::render_table(&rows));
            Ok(exit_for(outcome))
        }
        Command::GenSuite(args) => {
            let spec = args.resolve()?;
            let n = cmd_gen_suite(&spec, &Default::default(), &args.out)?;
            println!("wrote {n} episodes to {}", args.out.display());
            Ok(EXIT_OK)
        }
        Command::Validate(args) => {
            let base = args.suite.clone().unwrap_or_else(|| PathBuf::from("suite"));
            let scenes = args.scenes.clone().unwrap_or_else(|| base.join("scenes"));
            let episodes = args.episodes.clone().unwrap_or_else(|| base.join("episodes.json"));
            let controller = match &args.config {
                Some(p) => RunConfig::load(p)?.controller,
                None => Default::default(),
            };
            let diagnostics = cmd_validate(&scenes, &episodes, &controller)?;
            if diagnostics.is_empty() {
                println!("ok");
                Ok(EXIT_OK)
            } else {
                println!("{}", format_diagnostics(&diagnostics));
                Ok(exit_for(Outcome::Violations(diagnostics.len())))
            }
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
