//! Versioned single-document model checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::json;
use super::preprocess::PreprocessStats;
use crate::autoencoder::AnomalyThreshold;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::HybridModel;
use crate::nn::Module;
use crate::tensor::{shape_str, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredParameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Fully resolved run configuration, seed included.
    pub config: RunConfig,
    pub stats: PreprocessStats,
    pub anomaly_threshold: Option<AnomalyThreshold>,
    pub parameters: Vec<StoredParameter>,
}

impl Checkpoint {
    pub fn new(model: &HybridModel, stats: &PreprocessStats, config: &RunConfig) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: config.clone(),
            stats: stats.clone(),
            anomaly_threshold: model.threshold,
            parameters: model
                .parameters()
                .iter()
                .map(|p| StoredParameter {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = json::to_string(self, false)?;
        text.push('\n');
        Ok(text)
    }

    /// Parses and checks the version before the body, so that future layouts
    /// are reported as incompatible rather than malformed.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("not a JSON document: {e}")))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
        if version != u64::from(CHECKPOINT_FORMAT_VERSION) {
            return Err(Error::Incompatible {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                supported: CHECKPOINT_FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))
    }

    /// Rebuilds the model, checking every tensor against the configuration.
    pub fn into_model(self) -> Result<LoadedCheckpoint> {
        self.stats.validate()?;
        let model_config = self.config.model_config(self.stats.static_dim(), self.stats.series_dim());
        let mut model = HybridModel::new(model_config, self.config.seed)
            .map_err(|e| Error::Corrupt(format!("stored configuration is invalid: {e}")))?;
        {
            let mut params = model.parameters_mut();
            if params.len() != self.parameters.len() {
                return Err(Error::Corrupt(format!(
                    "configuration implies {} parameters, file has {}",
                    params.len(),
                    self.parameters.len()
                )));
            }
            for (p, stored) in params.iter_mut().zip(self.parameters) {
                if p.name != stored.name {
                    return Err(Error::Corrupt(format!("expected parameter {}, found {}", p.name, stored.name)));
                }
                if p.value.shape() != stored.shape.as_slice() {
                    return Err(Error::Corrupt(format!(
                        "parameter {} has shape {}, configuration implies {}",
                        p.name,
                        shape_str(&stored.shape),
                        shape_str(p.value.shape())
                    )));
                }
                p.value = Tensor::new(stored.shape, stored.values)
                    .map_err(|e| Error::Corrupt(format!("parameter {}: {e}", p.name)))?;
                if !p.value.is_finite() {
                    return Err(Error::Corrupt(format!("parameter {} has non-finite values", p.name)));
                }
            }
        }
        model.threshold = self.anomaly_threshold;
        Ok(LoadedCheckpoint {
            model,
            stats: self.stats,
            config: self.config,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub model: HybridModel,
    pub stats: PreprocessStats,
    pub config: RunConfig,
}

pub fn save_checkpoint(path: &Path, model: &HybridModel, stats: &PreprocessStats, config: &RunConfig) -> Result<()> {
    let text = Checkpoint::new(model, stats, config).to_json()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::preprocess::fit_preprocessor;
    use crate::data::record::tests::sample;
    use crate::fusion::LevelPolicy;
    use crate::model::Inputs;

    fn fixture() -> (HybridModel, PreprocessStats, RunConfig) {
        let stats = fit_preprocessor(&[sample("a"), sample("b")], 4).unwrap();
        let mut config = RunConfig::default();
        config.dnn.hidden_dims = vec![5];
        config.dnn.output_dim = 4;
        config.transformer.seq_len = 4;
        config.transformer.d_model = 4;
        config.transformer.n_heads = 2;
        config.transformer.d_ff = 4;
        config.ae.latent_dim = 3;
        config.resolve(stats.static_dim(), stats.series_dim());
        let mut model = HybridModel::new(config.model_config(stats.static_dim(), stats.series_dim()), 3).unwrap();
        model.threshold = Some(AnomalyThreshold { tau: 0.1, quantile: 0.95, calibration_count: 12 });
        (model, stats, config)
    }

    #[test]
    fn round_trip_is_exact() {
        let (model, stats, config) = fixture();
        let text = Checkpoint::new(&model, &stats, &config).to_json().unwrap();
        let loaded = Checkpoint::from_json(&text).unwrap().into_model().unwrap();
        assert_eq!(loaded.model.snapshot(), model.snapshot());
        assert_eq!(loaded.model.threshold, model.threshold);
        assert_eq!(Checkpoint::new(&loaded.model, &loaded.stats, &loaded.config).to_json().unwrap(), text);

        let x_s = Tensor::matrix(2, stats.static_dim(), (0..2 * stats.static_dim()).map(|i| i as f64 * 0.1).collect()).unwrap();
        let x_t = Tensor::new(vec![2, 4, 4], (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
        let inputs = Inputs::new(x_s, x_t, Tensor::filled(&[2, 4], 1.0)).unwrap();
        let a = model.predict(&inputs, &LevelPolicy::default()).unwrap();
        let b = loaded.model.predict(&inputs, &LevelPolicy::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn future_version_is_incompatible() {
        let (model, stats, config) = fixture();
        let text = Checkpoint::new(&model, &stats, &config)
            .to_json()
            .unwrap()
            .replacen("\"format_version\":1", "\"format_version\":999", 1);
        assert!(matches!(Checkpoint::from_json(&text).unwrap_err(), Error::Incompatible { found: 999, supported: 1 }));
    }

    #[test]
    fn shape_mismatch_is_corruption() {
        let (model, stats, config) = fixture();
        let mut ck = Checkpoint::new(&model, &stats, &config);
        ck.parameters[0].shape = vec![1, 1];
        ck.parameters[0].values = vec![0.0];
        assert!(matches!(ck.into_model().unwrap_err(), Error::Corrupt(m) if m.contains("shape")));
        assert!(matches!(Checkpoint::from_json("{").unwrap_err(), Error::Corrupt(_)));
    }
}
