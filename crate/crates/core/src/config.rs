//! Versioned TOML configuration for the end-to-end pipeline.
//!
//! ```toml
//! version = 1
//! master_seed = 7
//! n_model_seeds = 2
//!
//! [data]    # DataConfig
//! [model]   # widths; beta_dim, embed_dim, gru_hidden
//! [train]   # TrainConfig
//! [cem]     # CemConfig
//! [eval]    # EvalConfig
//! ```

use serde::{Deserialize, Serialize};

use crate::dataset::DataConfig;
use crate::model::{ModelConfig, TerrainMode};
use crate::planner::CemConfig;
use crate::sim::{ACTION_DIM, OBS_DIM, TERRAIN_DIM};
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelWidths {
    pub beta_dim: usize,
    pub embed_dim: usize,
    pub gru_hidden: usize,
}

impl ModelWidths {
    pub fn model_config(&self, terrain_mode: TerrainMode) -> ModelConfig {
        ModelConfig {
            beta_dim: self.beta_dim,
            obs_dim: OBS_DIM,
            action_dim: ACTION_DIM,
            terrain_dim: TERRAIN_DIM,
            embed_dim: self.embed_dim,
            gru_hidden: self.gru_hidden,
            terrain_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_prediction_rollouts: usize,
    pub prediction_len: usize,
    pub n_tasks: usize,
    pub step_limit: usize,
    pub omega: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub master_seed: u64,
    /// Independently trained models per variant.
    pub n_model_seeds: usize,
    pub data: DataConfig,
    pub model: ModelWidths,
    pub train: TrainConfig,
    pub cem: CemConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Incompatible {
                expected: format!("config version {CONFIG_VERSION}"),
                found: format!("config version {}", self.version),
            });
        }
        if self.n_model_seeds == 0 {
            return Err(Error::Config("n_model_seeds must be positive".into()));
        }
        self.data.validate()?;
        self.model.model_config(TerrainMode::Lookup).validate()?;
        self.train.validate()?;
        self.cem.validate()?;
        if self.train.target_len > self.data.traj_len {
            return Err(Error::Config("train.target_len exceeds data.traj_len".into()));
        }
        let e = &self.eval;
        if e.n_prediction_rollouts == 0 || e.prediction_len == 0 || e.n_tasks == 0 || e.step_limit == 0 {
            return Err(Error::Config("eval counts and lengths must be positive".into()));
        }
        if !(e.omega >= 0.0 && e.omega.is_finite()) {
            return Err(Error::Config("eval.omega must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Training seed of the `i`-th model seed.
    pub fn model_seed(&self, i: usize) -> u64 {
        self.train.seed.wrapping_add(i as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = include_str!("../../../configs/desk.toml");
    const FULL: &str = include_str!("../../../configs/full.toml");
    const MINI: &str = include_str!("../../../configs/mini.toml");

    #[test]
    fn shipped_configs_parse_and_round_trip() {
        for text in [DESK, FULL, MINI] {
            let cfg = PipelineConfig::from_toml(text).unwrap();
            assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let bad = DESK.replacen("master_seed", "master_sed", 1);
        assert!(matches!(PipelineConfig::from_toml(&bad), Err(Error::Config(_))));
        let old = DESK.replacen("version = 1", "version = 0", 1);
        assert!(matches!(PipelineConfig::from_toml(&old), Err(Error::Incompatible { .. })));
    }
}
