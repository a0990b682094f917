//! The JSON run configuration accepted by `imt train`.

use std::path::{Path, PathBuf};

use imt_core::{ImtError, Result};
use imt_net::loss::LossConfig;
use imt_net::train::{NoiseConfig, TrainConfig};
use imt_net::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of clean `.imts` stacks, used when `--data` is absent.
    pub dir: Option<PathBuf>,
    /// Overrides `train.val_fraction` when set.
    pub val_fraction: Option<f64>,
    /// Perceptual feature weights; a fixed random extractor otherwise.
    pub feature_weights: Option<PathBuf>,
    pub feature_seed: u64,
    pub init_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            val_fraction: None,
            feature_weights: None,
            feature_seed: 7,
            init_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub noise: NoiseConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| ImtError::invalid(format!("run config: {e}")))?;
        if let Some(f) = cfg.data.val_fraction {
            cfg.train.val_fraction = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ImtError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.noise.validate()
    }
}
