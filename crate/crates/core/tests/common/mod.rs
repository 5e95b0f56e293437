//! Oracles and fixtures shared by the integration tests. The oracles are
//! written from the textbook definitions, not from the library code.
#![allow(dead_code)]

use rand::Rng;
use taxrisk_core::autoencoder::{reconstruction_error, AeConfig, Autoencoder};
use taxrisk_core::metrics::ConfusionMatrix;
use taxrisk_core::nn::{adam_step, Activation, AdamConfig, AdamState, Differentiable, Module, Parameter};
use taxrisk_core::rng::{stream, Purpose};
use taxrisk_core::{Result, Tensor};

/// `(accuracy, macro recall, macro F1)` counted directly from
/// `(truth, predicted)` pairs, F1 as the harmonic mean of precision and recall.
pub fn brute_force_metrics(pairs: &[(usize, usize)]) -> (f64, f64, f64) {
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in 0..3 {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let actual = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        recall_sum += recall;
        f1_sum += if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    (correct / pairs.len() as f64, recall_sum / 3.0, f1_sum / 3.0)
}

/// Row-major 3×3 counts (row = truth) to the pair list they summarize.
pub fn expand(counts: &[u64]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &n) in counts.iter().enumerate() {
        pairs.extend(std::iter::repeat_n((i / 3, i % 3), n as usize));
    }
    pairs
}

pub fn confusion(counts: &[u64]) -> ConfusionMatrix {
    let mut m = [[0u64; 3]; 3];
    for (i, &n) in counts.iter().enumerate() {
        m[i / 3][i % 3] = n;
    }
    ConfusionMatrix(m)
}

/// Linear interpolation between the order statistics around `q·(n−1)`.
pub fn oracle_quantile(errors: &[f64], q: f64) -> f64 {
    let mut s = errors.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let frac = pos - lo as f64;
    (1.0 - frac) * s[lo] + frac * s[hi]
}

/// Trains an identity-activation autoencoder alone on a rank-`rank` matrix
/// and returns the final mean reconstruction error.
pub fn rank_limited_ae_error(seed: u64, steps: usize) -> f64 {
    let (n, dim, rank, latent) = (64, 12, 3, 4);
    let mut rng = stream(seed, Purpose::Synthetic, 0);
    let basis: Vec<f64> = (0..rank * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let coeffs: Vec<f64> = (0..n * rank).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z = Tensor::matrix(n, rank, coeffs).unwrap().matmul(&Tensor::matrix(rank, dim, basis).unwrap()).unwrap();

    let cfg = AeConfig { input_dim: dim, latent_dim: latent, threshold_quantile: 0.95 };
    let mut ae =
        Autoencoder::with_activations(cfg, Activation::Identity, Activation::Identity, &mut stream(seed, Purpose::Init, 0))
            .unwrap();
    let mut state = AdamState::new(AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() });
    for _ in 0..steps {
        let (code, recon) = ae.forward(&z).unwrap();
        let mut grad = recon.sub(&z).unwrap();
        grad.scale(2.0 / n as f64);
        ae.backward(&code.map(|_| 0.0), &grad).unwrap();
        adam_step(ae.parameters_mut(), &mut state).unwrap();
    }
    let (_, recon) = ae.apply(&z).unwrap();
    reconstruction_error(&z, &recon).unwrap().iter().sum::<f64>() / n as f64
}

/// Fixed, non-uniform output weights so that every output coordinate
/// contributes to the scalar loss.
pub fn output_weights(y: &Tensor) -> Tensor {
    Tensor::new(y.shape().to_vec(), (0..y.len()).map(|i| (i as f64 * 0.37 + 0.1).cos()).collect()).unwrap()
}

/// Scalar loss `Σ w ⊙ f(x)` around any layer with forward/backward.
pub struct Weighted<F> {
    pub f: F,
    pub forward: fn(&mut F, &Tensor) -> Result<Tensor>,
    pub backward: fn(&mut F, &Tensor) -> Result<Tensor>,
    pub pattern: fn(&mut F, &Tensor) -> Result<Vec<bool>>,
}

impl<F: Module> Differentiable for Weighted<F> {
    fn loss(&mut self, x: &Tensor) -> Result<f64> {
        let y = (self.forward)(&mut self.f, x)?;
        let w = output_weights(&y);
        Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    }

    fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
        let y = (self.forward)(&mut self.f, x)?;
        let w = output_weights(&y);
        let l = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        Ok((l, (self.backward)(&mut self.f, &w)?))
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.f.parameters_mut()
    }

    fn relu_pattern(&mut self, x: &Tensor) -> Result<Vec<bool>> {
        (self.pattern)(&mut self.f, x)
    }
}

pub fn no_relu<F>(_: &mut F, _: &Tensor) -> Result<Vec<bool>> {
    Ok(Vec::new())
}
