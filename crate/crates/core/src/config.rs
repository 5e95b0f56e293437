//! Run configuration: every tunable in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::AeConfig;
use crate::data::synthetic::SyntheticConfig;
use crate::error::{Error, Result};
use crate::fusion::LevelPolicy;
use crate::model::ModelConfig;
use crate::static_encoder::DnnConfig;
use crate::temporal::TransformerConfig;
use crate::train::TrainConfig;

pub const DEFAULT_SEED: u64 = 20240601;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// All sections are optional in a file; missing keys take their defaults and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, splitting, initialisation and batching.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub dnn: DnnConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
    #[serde(default)]
    pub ae: AeConfig,
    #[serde(default)]
    pub policy: LevelPolicy,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            dnn: DnnConfig::default(),
            transformer: TransformerConfig::default(),
            ae: AeConfig::default(),
            policy: LevelPolicy::default(),
            train: TrainConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Model architecture with the data-dependent widths filled in.
    pub fn model_config(&self, static_dim: usize, series_dim: usize) -> ModelConfig {
        let mut m = ModelConfig {
            dnn: self.dnn.clone(),
            transformer: self.transformer.clone(),
            ae: self.ae.clone(),
        };
        m.resolve(static_dim, series_dim);
        m
    }

    /// Records resolved widths so that the written config is complete.
    pub fn resolve(&mut self, static_dim: usize, series_dim: usize) {
        let m = self.model_config(static_dim, series_dim);
        self.dnn = m.dnn;
        self.transformer = m.transformer;
        self.ae = m.ae;
    }

    pub fn validate(&self) -> Result<()> {
        let static_dim = self.dnn.input_dim.max(1);
        let series_dim = self.transformer.series_dim.max(1);
        self.model_config(static_dim, series_dim).validate()?;
        let expected_ae = self.dnn.output_dim + self.transformer.d_model;
        if self.ae.input_dim != 0 && self.ae.input_dim != expected_ae {
            return Err(Error::Config(format!(
                "ae.input_dim {} must be 0 or dnn.output_dim + transformer.d_model = {expected_ae}",
                self.ae.input_dim
            )));
        }
        self.policy.validate()?;
        self.train.validate()?;
        self.synthetic.validate()
    }
}
