//! Fusion of the three representations into a risk distribution, level
//! assignment, and the joint training objective.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Activation, DenseLayer, Module, Parameter};
use crate::nn::softmax_rows;
use crate::tensor::{shape_str, Tensor};

pub const NUM_CLASSES: usize = 3;

/// Risk grade. The integer code is the class index everywhere, files included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 3] = [RiskLevel::Low, RiskLevel::Medium, RiskLevel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        RiskLevel::ALL
            .get(i)
            .copied()
            .ok_or(Error::InvalidLabel { label: i })
    }

    pub fn name(self) -> &'static str {
        match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Argmax,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelPolicy {
    pub mode: PolicyMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high_threshold: Option<f64>,
}

impl Default for LevelPolicy {
    fn default() -> Self {
        LevelPolicy {
            mode: PolicyMode::Argmax,
            high_threshold: None,
        }
    }
}

impl LevelPolicy {
    pub fn threshold(p_high: f64) -> Self {
        LevelPolicy {
            mode: PolicyMode::Threshold,
            high_threshold: Some(p_high),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.high_threshold) {
            (PolicyMode::Threshold, None) => {
                Err(Error::Config("threshold policy requires policy.high_threshold".into()))
            }
            (_, Some(p)) if !(p > 0.0 && p < 1.0) => Err(Error::Config(format!(
                "policy.high_threshold {p} must lie in (0, 1)"
            ))),
            _ => Ok(()),
        }
    }
}

/// `argmax` or `threshold:<p_high>`.
impl FromStr for LevelPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let policy = match s.split_once(':') {
            None if s == "argmax" => LevelPolicy::default(),
            Some(("threshold", p)) => LevelPolicy::threshold(
                p.parse()
                    .map_err(|_| Error::Config(format!("bad high threshold in policy `{s}`")))?,
            ),
            _ => {
                return Err(Error::Config(format!(
                    "unknown policy `{s}` (expected `argmax` or `threshold:<p>`)"
                )))
            }
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Column-wise concatenation `[h_s | h_t | z]`.
pub fn fuse(h_s: &Tensor, h_t: &Tensor, z: &Tensor) -> Result<Tensor> {
    for (name, t) in [("h_t", h_t), ("z", z)] {
        if t.rows() != h_s.rows() {
            return Err(Error::dim(
                format!("fusion batch of {name}"),
                format!("{} rows", h_s.rows()),
                shape_str(t.shape()),
            ));
        }
    }
    Tensor::concat_cols(&[h_s, h_t, z])
}

/// Inverse of [`fuse`] given the widths of the first two parts.
pub fn split_fused(h: &Tensor, d_s: usize, d_t: usize) -> Result<(Tensor, Tensor, Tensor)> {
    Ok((
        h.slice_cols(0, d_s)?,
        h.slice_cols(d_s, d_s + d_t)?,
        h.slice_cols(d_s + d_t, h.cols())?,
    ))
}

/// `ŷ = softmax(H W + b)` over (Low, Medium, High).
#[derive(Debug, Clone)]
pub struct FusionHead {
    pub layer: DenseLayer,
}

impl FusionHead {
    pub fn new(input_dim: usize, rng: &mut impl Rng) -> Self {
        FusionHead {
            layer: DenseLayer::new("head", input_dim, NUM_CLASSES, Activation::Identity, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer.in_dim()
    }

    fn check(&self, h: &Tensor) -> Result<()> {
        if h.cols() != self.input_dim() {
            return Err(Error::dim(
                "fusion head input",
                format!("[batch × {}]", self.input_dim()),
                shape_str(h.shape()),
            ));
        }
        Ok(())
    }

    pub fn classify(&self, h: &Tensor) -> Result<Tensor> {
        self.check(h)?;
        softmax_rows(&self.layer.apply(h)?)
    }

    pub fn forward(&mut self, h: &Tensor) -> Result<Tensor> {
        self.check(h)?;
        softmax_rows(&self.layer.forward(h)?)
    }

    /// Takes the gradient with respect to the logits.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        self.layer.backward(grad_logits)
    }
}

impl Module for FusionHead {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layer.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layer.parameters_mut()
    }
}

pub fn classify(head: &FusionHead, h: &Tensor) -> Result<Tensor> {
    head.classify(h)
}

/// Index of the largest entry; ties go to the later (higher-risk) class.
fn argmax_high(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p >= probs[best] {
            best = i;
        }
    }
    best
}

pub fn assign_level(probs: &[f64], policy: &LevelPolicy) -> Result<RiskLevel> {
    if probs.len() != NUM_CLASSES {
        return Err(Error::InvalidDistribution(format!(
            "expected {NUM_CLASSES} probabilities, got {}",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidDistribution(format!("probabilities {probs:?} sum to {sum}")));
    }
    match policy.mode {
        PolicyMode::Argmax => RiskLevel::from_index(argmax_high(probs)),
        PolicyMode::Threshold => {
            let p_h = policy
                .high_threshold
                .ok_or_else(|| Error::Config("threshold policy without high_threshold".into()))?;
            if probs[RiskLevel::High.index()] >= p_h {
                Ok(RiskLevel::High)
            } else {
                RiskLevel::from_index(argmax_high(&probs[..2]))
            }
        }
    }
}

/// Mean of the errors selected by `mask`, or 0 when none are selected.
pub fn masked_mean(errors: &[f64], mask: &[bool]) -> f64 {
    let (sum, n) = errors
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `CE(ŷ, y) + λ · mean(AE error over normal samples)`.
pub fn total_loss(
    probs: &Tensor,
    labels: &[usize],
    ae_errors: &[f64],
    normal_mask: &[bool],
    lambda_ae: f64,
) -> Result<f64> {
    if lambda_ae < 0.0 {
        return Err(Error::InvalidInput(format!("lambda_ae {lambda_ae} must be ≥ 0")));
    }
    if ae_errors.len() != labels.len() || normal_mask.len() != labels.len() {
        return Err(Error::dim(
            "total loss inputs",
            format!("{} errors and mask entries", labels.len()),
            format!("{} errors, {} mask entries", ae_errors.len(), normal_mask.len()),
        ));
    }
    let ce = cross_entropy(probs, labels)?;
    if lambda_ae == 0.0 {
        return Ok(ce);
    }
    Ok(ce + lambda_ae * masked_mean(ae_errors, normal_mask))
}
