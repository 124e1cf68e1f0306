use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stagenav_core::controller::{apply_ablation, Ablation, ControllerConfig};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    Oracle,
    NoisyOracle { rate: f64, seed: u64 },
    /// Endpoint, key and model come from the environment.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of scene files.
    pub scenes: PathBuf,
    pub episodes: PathBuf,
    pub backend: BackendSpec,
    pub controller: ControllerConfig,
    pub runs: u32,
    pub parallelism: usize,
    pub out: PathBuf,
    pub allow_failures: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenes: PathBuf::from("suite/scenes"),
            episodes: PathBuf::from("suite/episodes.json"),
            backend: BackendSpec::Oracle,
            controller: ControllerConfig::default(),
            runs: 1,
            parallelism: 1,
            out: PathBuf::from("out"),
            allow_failures: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::Schema {
            file: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(HarnessError::Config("parallelism must be at least 1".into()));
        }
        if let BackendSpec::NoisyOracle { rate, .. } = self.backend {
            if !(0.0..=1.0).contains(&rate) {
                return Err(HarnessError::Config(format!(
                    "noise rate must lie in [0, 1], got {rate}"
                )));
            }
        }
        self.controller
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Named ablation variants. Anything else is parsed as `+`-joined flag
/// names, e.g. `disable_dgmf+disable_isgr`.
pub const VARIANTS: [(&str, Ablation); 7] = [
    ("full", flags(false, false, false, false, false)),
    ("no-dgmf", flags(true, false, false, false, false)),
    ("no-isgr", flags(false, true, false, false, false)),
    ("dual-fov-only", flags(true, true, false, false, false)),
    ("no-dual-fov", flags(false, false, true, false, false)),
    ("no-transition", flags(false, false, false, true, false)),
    ("execution-only", flags(false, false, false, false, true)),
];

const fn flags(dgmf: bool, isgr: bool, dual_fov: bool, transition: bool, exec_only: bool) -> Ablation {
    Ablation {
        disable_dgmf: dgmf,
        disable_isgr: isgr,
        disable_dual_fov: dual_fov,
        disable_transition: transition,
        execution_only: exec_only,
    }
}

pub fn parse_variant(name: &str) -> Result<Ablation, HarnessError> {
    if let Some((_, a)) = VARIANTS.iter().find(|(n, _)| *n == name) {
        return Ok(*a);
    }
    let mut a = Ablation::default();
    for flag in name.split('+').map(str::trim) {
        let slot = match flag {
            "disable_dgmf" => &mut a.disable_dgmf,
            "disable_isgr" => &mut a.disable_isgr,
            "disable_dual_fov" => &mut a.disable_dual_fov,
            "disable_transition" => &mut a.disable_transition,
            "execution_only" => &mut a.execution_only,
            other => {
                let known: Vec<_> = VARIANTS.iter().map(|(n, _)| *n).collect();
                return Err(HarnessError::Config(format!(
                    "unknown variant or flag {other:?}; variants are {}",
                    known.join(", ")
                )));
            }
        };
        *slot = true;
    }
    apply_ablation(&a).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_variants_are_supported() {
        for (name, a) in VARIANTS {
            assert_eq!(parse_variant(name).unwrap(), a);
        }
    }

    #[test]
    fn flag_combinations() {
        let a = parse_variant("disable_dgmf+disable_isgr").unwrap();
        assert_eq!(a, parse_variant("dual-fov-only").unwrap());
        let err = parse_variant("disable_transition+execution_only").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("disable_transition") && msg.contains("execution_only"), "{msg}");
        assert!(parse_variant("bogus").is_err());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "runs = 3\n[backend]\nkind = \"noisy-oracle\"\nrate = 0.15\nseed = 9\n[controller]\nhorizon = 6\n",
        )
        .unwrap();
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.controller.horizon, 6);
        assert_eq!(cfg.controller.max_total_steps, 300);
        assert_eq!(cfg.backend, BackendSpec::NoisyOracle { rate: 0.15, seed: 9 });
    }
}
