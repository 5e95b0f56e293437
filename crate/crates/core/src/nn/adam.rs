use serde::{Deserialize, Serialize};

use super::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter in the order the
/// parameters are passed to [`adam_step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            names: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure_slots(&mut self, params: &[&mut Parameter]) -> Result<()> {
        if self.names.is_empty() {
            self.names = params.iter().map(|p| p.name.clone()).collect();
            self.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        let same = self.names.len() == params.len()
            && params
                .iter()
                .zip(&self.first)
                .zip(&self.names)
                .all(|((p, m), n)| p.name == *n && p.value.shape() == m.shape());
        if same {
            Ok(())
        } else {
            Err(Error::State(
                "parameter set changed between optimizer steps".into(),
            ))
        }
    }
}

/// One bias-corrected Adam update; gradients are zeroed afterwards.
///
/// All gradients are checked before any parameter moves, so a divergence
/// error leaves the parameters untouched.
pub fn adam_step(mut params: Vec<&mut Parameter>, state: &mut AdamState) -> Result<()> {
    if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::Divergence(format!(
            "non-finite gradient in parameter {}",
            bad.name
        )));
    }
    state.ensure_slots(&params)?;
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let grads = p.grad.data().to_vec();
        let values = p.value.data_mut();
        for (((w, g), m), v) in values
            .iter_mut()
            .zip(&grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        p.zero_grad();
    }
    Ok(())
}
