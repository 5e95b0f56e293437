use super::{Module, Parameter};
use crate::error::{Error, Result};
use crate::tensor::{shape_str, Tensor};

/// Variance floor inside the square root. Small enough that normalized rows
/// have unit variance to ~1e-9 for any row whose spread is not degenerate.
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Per-row normalization over the last axis with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Parameter,
    pub shift: Parameter,
    cache: Option<LnCache>,
}

#[derive(Debug, Clone)]
struct LnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: Parameter::new(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            shift: Parameter::new(format!("{name}.shift"), Tensor::zeros(&[dim])),
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.value.len()
    }

    /// Zero-mean, unit-variance rows before the learned affine map.
    pub fn normalize(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        if x.cols() != self.dim() {
            return Err(Error::dim(
                format!("{} input", self.gain.name),
                format!("[… × {}]", self.dim()),
                shape_str(x.shape()),
            ));
        }
        let d = self.dim() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        Ok((out, inv_std))
    }

    fn affine(&self, normalized: &Tensor) -> Tensor {
        let mut out = normalized.clone();
        let g = self.gain.value.data();
        let b = self.shift.value.data();
        for r in 0..out.rows() {
            for ((v, g), b) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * g + b;
            }
        }
        out
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _) = self.normalize(x)?;
        Ok(self.affine(&n))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (normalized, inv_std) = self.normalize(x)?;
        let out = self.affine(&normalized);
        self.cache = Some(LnCache {
            normalized,
            inv_std,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::State(format!("{}: backward called before forward", self.gain.name))
        })?;
        if grad_out.shape() != cache.normalized.shape() {
            return Err(Error::dim(
                format!("{} upstream gradient", self.gain.name),
                shape_str(cache.normalized.shape()),
                shape_str(grad_out.shape()),
            ));
        }
        let d = self.dim();
        let gain = self.gain.value.data().to_vec();
        let mut dx = grad_out.clone();
        let mut dgain = vec![0.0; d];
        let mut dshift = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for r in 0..grad_out.rows() {
            let g = grad_out.row(r);
            let xhat = cache.normalized.row(r);
            for j in 0..d {
                dgain[j] += g[j] * xhat[j];
                dshift[j] += g[j];
                dxhat[j] = g[j] * gain[j];
            }
            let sum: f64 = dxhat.iter().sum();
            let dot: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
            let inv = cache.inv_std[r];
            let df = d as f64;
            for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = inv / df * (df * dxhat[j] - sum - xhat[j] * dot);
            }
        }
        self.gain.grad.add_assign(&Tensor::vector(dgain)?)?;
        self.shift.grad.add_assign(&Tensor::vector(dshift)?)?;
        Ok(dx)
    }
}

impl Module for LayerNorm {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gain, &self.shift]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gain, &mut self.shift]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check::{grad_check, Differentiable, GradCheckOptions};

    #[test]
    fn rows_are_standardized() {
        let ln = LayerNorm::new("ln", 4);
        let x = Tensor::matrix(2, 4, vec![1., 2., 3., 10., -5., 0.5, 0.25, 7.]).unwrap();
        let y = ln.apply(&x).unwrap();
        for r in 0..2 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    struct Weighted {
        ln: LayerNorm,
        w: Tensor,
    }

    impl Differentiable for Weighted {
        fn loss(&mut self, input: &Tensor) -> Result<f64> {
            let y = self.ln.apply(input)?;
            Ok(y.data().iter().zip(self.w.data()).map(|(a, b)| a * b).sum())
        }

        fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
            let y = self.ln.forward(input)?;
            let l = y.data().iter().zip(self.w.data()).map(|(a, b)| a * b).sum();
            let g = self.ln.backward(&self.w)?;
            Ok((l, g))
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            self.ln.parameters_mut()
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut ln = LayerNorm::new("ln", 5);
        ln.gain.value = Tensor::vector(vec![1.2, 0.7, -0.3, 1.0, 0.5]).unwrap();
        ln.shift.value = Tensor::vector(vec![0.1, -0.2, 0.0, 0.3, 0.05]).unwrap();
        let w = Tensor::matrix(3, 5, (0..15).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect())
            .unwrap();
        let x = Tensor::matrix(3, 5, (0..15).map(|i| (i as f64 * 1.3).cos() * 2.0).collect())
            .unwrap();
        let mut f = Weighted { ln, w };
        let err = grad_check(&mut f, &x, &GradCheckOptions::default()).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
