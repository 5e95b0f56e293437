//! The full hybrid: static and temporal encoders feed an autoencoder, and
//! all three representations feed the softmax risk head.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{flag_anomaly, reconstruction_error, AeConfig, AnomalyThreshold, Autoencoder};
use crate::error::{Error, Result};
use crate::fusion::{assign_level, fuse, masked_mean, split_fused, FusionHead, LevelPolicy, RiskLevel};
use crate::nn::{cross_entropy, cross_entropy_grad, Module, Parameter};
use crate::rng::{stream, Purpose};
use crate::static_encoder::{DnnConfig, DnnEncoder};
use crate::temporal::{TemporalEncoder, TransformerConfig};
use crate::tensor::{shape_str, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub dnn: DnnConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
    #[serde(default)]
    pub ae: AeConfig,
}

impl ModelConfig {
    /// Fills in the data-dependent widths.
    pub fn resolve(&mut self, static_dim: usize, series_dim: usize) {
        self.dnn.input_dim = static_dim;
        self.transformer.series_dim = series_dim;
        self.ae.input_dim = self.dnn.output_dim + self.transformer.d_model;
    }

    pub fn validate(&self) -> Result<()> {
        self.dnn.validate()?;
        self.transformer.validate()?;
        let expected = self.dnn.output_dim + self.transformer.d_model;
        if self.ae.input_dim != expected {
            return Err(Error::Config(format!(
                "ae.input_dim {} must equal dnn.output_dim + transformer.d_model = {expected}",
                self.ae.input_dim
            )));
        }
        self.ae.validate()
    }

    pub fn fused_dim(&self) -> usize {
        self.ae.input_dim + self.ae.latent_dim
    }
}

/// Preprocessed model inputs for a batch of firms.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    /// `[batch × static width]`
    pub x_s: Tensor,
    /// `[batch × seq_len × channels]`
    pub x_t: Tensor,
    /// `[batch × seq_len]`, 1 for observed quarters and 0 for padding.
    pub mask: Tensor,
}

impl Inputs {
    pub fn new(x_s: Tensor, x_t: Tensor, mask: Tensor) -> Result<Self> {
        let b = x_s.rows();
        if x_s.shape().len() != 2 || x_t.shape().len() != 3 || x_t.shape()[0] != b {
            return Err(Error::dim(
                "model inputs",
                format!("[{b} × d] and [{b} × seq × channels]"),
                format!("{} and {}", shape_str(x_s.shape()), shape_str(x_t.shape())),
            ));
        }
        if mask.shape() != [b, x_t.shape()[1]] {
            return Err(Error::dim("padding mask", shape_str(&[b, x_t.shape()[1]]), shape_str(mask.shape())));
        }
        Ok(Inputs { x_s, x_t, mask })
    }

    pub fn len(&self) -> usize {
        self.x_s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Result<Inputs> {
        Ok(Inputs {
            x_s: self.x_s.select(indices)?,
            x_t: self.x_t.select(indices)?,
            mask: self.mask.select(indices)?,
        })
    }
}

/// Everything a forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// `[batch × 3]`, columns Low, Medium, High.
    pub probs: Tensor,
    pub ae_errors: Vec<f64>,
}

/// Components of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    /// Mean reconstruction error over low-risk samples, before weighting.
    pub ae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPrediction {
    pub probs: [f64; 3],
    pub level: RiskLevel,
    pub reconstruction_error: f64,
    /// `None` when the model carries no calibrated threshold.
    pub anomaly_flag: Option<bool>,
}

/// Gradients with respect to the model inputs.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub x_s: Tensor,
    pub x_t: Tensor,
}

#[derive(Debug, Clone)]
pub struct HybridModel {
    pub config: ModelConfig,
    pub static_encoder: DnnEncoder,
    pub temporal_encoder: TemporalEncoder,
    pub autoencoder: Autoencoder,
    pub head: FusionHead,
    pub threshold: Option<AnomalyThreshold>,
    cache: Option<ModelCache>,
}

#[derive(Debug, Clone)]
struct ModelCache {
    z: Tensor,
    recon: Tensor,
    probs: Tensor,
}

impl HybridModel {
    /// Seeded Glorot initialisation of every component.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Purpose::Init, 0);
        let static_encoder = DnnEncoder::new(config.dnn.clone(), &mut rng)?;
        let temporal_encoder = TemporalEncoder::new(config.transformer.clone(), &mut rng)?;
        let autoencoder = Autoencoder::new(config.ae.clone(), &mut rng)?;
        let head = FusionHead::new(config.fused_dim(), &mut rng);
        Ok(HybridModel {
            config,
            static_encoder,
            temporal_encoder,
            autoencoder,
            head,
            threshold: None,
            cache: None,
        })
    }

    fn outputs(&self, z: &Tensor, recon: &Tensor, probs: Tensor) -> Result<Outputs> {
        Ok(Outputs {
            probs,
            ae_errors: reconstruction_error(z, recon)?,
        })
    }

    /// Inference without caching.
    pub fn apply(&self, inputs: &Inputs) -> Result<Outputs> {
        let h_s = self.static_encoder.encode(&inputs.x_s)?;
        let h_t = self.temporal_encoder.encode(&inputs.x_t, Some(&inputs.mask))?;
        let z = Tensor::concat_cols(&[&h_s, &h_t])?;
        let (latent, recon) = self.autoencoder.apply(&z)?;
        let probs = self.head.classify(&fuse(&h_s, &h_t, &latent)?)?;
        self.outputs(&z, &recon, probs)
    }

    pub fn forward(&mut self, inputs: &Inputs) -> Result<Outputs> {
        let h_s = self.static_encoder.forward(&inputs.x_s)?;
        let h_t = self.temporal_encoder.forward(&inputs.x_t, Some(&inputs.mask))?;
        let z = Tensor::concat_cols(&[&h_s, &h_t])?;
        let (latent, recon) = self.autoencoder.forward(&z)?;
        let probs = self.head.forward(&fuse(&h_s, &h_t, &latent)?)?;
        let out = self.outputs(&z, &recon, probs.clone())?;
        self.cache = Some(ModelCache { z, recon, probs });
        Ok(out)
    }

    /// Joint loss of a forward pass: cross-entropy plus `lambda_ae` times the
    /// mean reconstruction error of the low-risk samples.
    pub fn loss(&self, outputs: &Outputs, labels: &[usize], lambda_ae: f64) -> Result<LossParts> {
        let ce = cross_entropy(&outputs.probs, labels)?;
        let normal: Vec<bool> = labels.iter().map(|&l| l == RiskLevel::Low.index()).collect();
        let ae = masked_mean(&outputs.ae_errors, &normal);
        Ok(LossParts {
            total: if lambda_ae == 0.0 { ce } else { ce + lambda_ae * ae },
            ce,
            ae,
        })
    }

    pub fn evaluate_loss(&self, inputs: &Inputs, labels: &[usize], lambda_ae: f64) -> Result<LossParts> {
        let out = self.apply(inputs)?;
        self.loss(&out, labels, lambda_ae)
    }

    /// Forward, loss and backward in one go. Parameter gradients accumulate
    /// into each `Parameter::grad`.
    pub fn loss_and_backward(
        &mut self,
        inputs: &Inputs,
        labels: &[usize],
        lambda_ae: f64,
    ) -> Result<(LossParts, InputGrads)> {
        if labels.len() != inputs.len() {
            return Err(Error::dim("labels", inputs.len(), labels.len()));
        }
        let out = self.forward(inputs)?;
        let parts = self.loss(&out, labels, lambda_ae)?;
        let cache = self.cache.take().ok_or_else(|| Error::State("model cache missing".into()))?;

        let grad_logits = cross_entropy_grad(&cache.probs, labels, 1.0)?;
        let grad_fused = self.head.backward(&grad_logits)?;
        let d_s = self.config.dnn.output_dim;
        let d_t = self.config.transformer.d_model;
        let (mut g_s, mut g_t, g_latent) = split_fused(&grad_fused, d_s, d_t)?;

        let n_normal = labels.iter().filter(|&&l| l == RiskLevel::Low.index()).count();
        let mut g_recon = Tensor::zeros(cache.z.shape());
        if n_normal > 0 && lambda_ae != 0.0 {
            let coef = 2.0 * lambda_ae / n_normal as f64;
            for (r, &label) in labels.iter().enumerate() {
                if label != RiskLevel::Low.index() {
                    continue;
                }
                for ((g, &zi), &ri) in g_recon.row_mut(r).iter_mut().zip(cache.z.row(r)).zip(cache.recon.row(r)) {
                    *g = coef * (ri - zi);
                }
            }
        }
        let mut g_z = self.autoencoder.backward(&g_latent, &g_recon)?;
        g_recon.scale(-1.0);
        g_z.add_assign(&g_recon)?;
        g_s.add_assign(&g_z.slice_cols(0, d_s)?)?;
        g_t.add_assign(&g_z.slice_cols(d_s, d_s + d_t)?)?;

        let x_s = self.static_encoder.backward(&g_s)?;
        let x_t = self.temporal_encoder.backward(&g_t)?;
        Ok((parts, InputGrads { x_s, x_t }))
    }

    pub fn predict(&self, inputs: &Inputs, policy: &LevelPolicy) -> Result<Vec<RiskPrediction>> {
        let out = self.apply(inputs)?;
        (0..inputs.len())
            .map(|i| {
                let row = out.probs.row(i);
                let error = out.ae_errors[i];
                Ok(RiskPrediction {
                    probs: [row[0], row[1], row[2]],
                    level: assign_level(row, policy)?,
                    reconstruction_error: error,
                    anomaly_flag: self.threshold.as_ref().map(|t| flag_anomaly(error, t)),
                })
            })
            .collect()
    }

    /// Relu states of every component at the last cached forward pass.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut p = self.static_encoder.relu_pattern();
        p.extend(self.temporal_encoder.relu_pattern());
        p.extend(self.autoencoder.relu_pattern());
        p
    }

    /// Copies of all parameter values, in [`Module::parameters`] order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.parameters().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != snapshot.len() {
            return Err(Error::State(format!(
                "snapshot has {} tensors, model has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(snapshot) {
            if p.value.shape() != v.shape() {
                return Err(Error::dim(&p.name, shape_str(p.value.shape()), shape_str(v.shape())));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

impl Module for HybridModel {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.static_encoder.parameters();
        p.extend(self.temporal_encoder.parameters());
        p.extend(self.autoencoder.parameters());
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.static_encoder.parameters_mut();
        p.extend(self.temporal_encoder.parameters_mut());
        p.extend(self.autoencoder.parameters_mut());
        p.extend(self.head.parameters_mut());
        p
    }
}
