//! Minimal numeric core: parameters, layers with explicit forward/backward,
//! loss primitives, Adam and finite-difference gradient checking.

mod adam;
mod dense;
mod grad_check;
mod layer_norm;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub use grad_check::{grad_check, grad_check_report, Differentiable, GradCheckOptions, GradCheckReport};
pub use layer_norm::{LayerNorm, LAYER_NORM_EPS};
pub use ops::{cross_entropy, cross_entropy_grad, softmax_rows, CE_PROB_FLOOR};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns parameters, in a fixed deterministic order.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Glorot-uniform matrix: entries in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(&[fan_in, fan_out]);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
    t
}
