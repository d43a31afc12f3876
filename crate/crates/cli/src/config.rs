use std::path::Path;

use offload_core::lacs::LacsConfig;
use offload_core::sim::SimConfig;
use offload_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Evaluation settings shared by `eval` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub episodes: usize,
    /// First evaluation seed; episode `i` uses `seed_base + i`.
    pub seed_base: u64,
    /// Seed of the prompt perturbations in the perturbation sweep.
    pub noise_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 20,
            seed_base: 1_000,
            noise_seed: 17,
        }
    }
}

/// Contents of the TOML configuration file. Every section is optional and
/// uses the field names of the corresponding library type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub sim: SimConfig<f64>,
    pub train: TrainConfig<f64>,
    pub lacs: LacsConfig<f64>,
    pub eval: EvalSettings,
}

impl LabConfig {
    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.sim.seed = seed;
            self.train.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.sim.validate()?;
        self.train.validate()?;
        self.lacs.validate()?;
        if self.eval.episodes == 0 {
            return Err(Failure::config("eval.episodes must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: LabConfig = toml::from_str(
            r#"
            [sim]
            num_servers = 9
            [lacs]
            lambda_weight = 0.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.sim.num_servers, 9);
        assert_eq!(cfg.sim.arrival_prob, 0.3);
        assert_eq!(cfg.lacs.lambda_weight, 0.0);
        assert_eq!(cfg.lacs.lookahead_k, 3);
        assert_eq!(cfg.eval, EvalSettings::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&LabConfig::default()).unwrap();
        let back: LabConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, LabConfig::default());
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(toml::from_str::<LabConfig>("[simulation]\nnum_servers = 3\n").is_err());
    }

    #[test]
    fn seed_override_reaches_sim_and_train() {
        let cfg = LabConfig::default().with_seed(Some(7));
        assert_eq!((cfg.sim.seed, cfg.train.seed), (7, 7));
    }
}
