//! Autoencoder over the concatenated encoder outputs `Z = [h_s, h_t]`, with
//! reconstruction error and quantile-calibrated anomaly flagging.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Module, Parameter};
use crate::tensor::{shape_str, Tensor};

/// Calibration needs at least this many errors.
pub const MIN_CALIBRATION_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    /// `d_s + d_t`; zero in a config file means "infer".
    pub input_dim: usize,
    pub latent_dim: usize,
    pub threshold_quantile: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            input_dim: 0,
            latent_dim: 16,
            threshold_quantile: 0.95,
        }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim >= self.input_dim {
            return Err(Error::Config(format!(
                "ae.latent_dim {} must be in 1..{}",
                self.latent_dim, self.input_dim
            )));
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) {
            return Err(Error::Config(format!(
                "ae.threshold_quantile {} must lie in (0, 1)",
                self.threshold_quantile
            )));
        }
        Ok(())
    }
}

/// `z = relu(Z W_enc + b_enc)`, `Ẑ = z W_dec + b_dec`.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub encoder: DenseLayer,
    pub decoder: DenseLayer,
}

impl Autoencoder {
    pub fn new(config: AeConfig, rng: &mut impl Rng) -> Result<Self> {
        Autoencoder::with_activations(config, Activation::Relu, Activation::Identity, rng)
    }

    pub fn with_activations(
        config: AeConfig,
        encoder_activation: Activation,
        decoder_activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let encoder = DenseLayer::new("ae.encoder", config.input_dim, config.latent_dim, encoder_activation, rng);
        let decoder = DenseLayer::new("ae.decoder", config.latent_dim, config.input_dim, decoder_activation, rng);
        Ok(Autoencoder {
            config,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check(&self, z: &Tensor) -> Result<()> {
        if z.shape().len() != 2 || z.cols() != self.config.input_dim {
            return Err(Error::dim(
                "autoencoder input",
                format!("[batch × {}]", self.config.input_dim),
                shape_str(z.shape()),
            ));
        }
        Ok(())
    }

    /// Returns `(latent, reconstruction)` without caching.
    pub fn apply(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check(z)?;
        let latent = self.encoder.apply(z)?;
        let recon = self.decoder.apply(&latent)?;
        Ok((latent, recon))
    }

    pub fn forward(&mut self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check(z)?;
        let latent = self.encoder.forward(z)?;
        let recon = self.decoder.forward(&latent)?;
        Ok((latent, recon))
    }

    /// Backpropagates gradients arriving at the latent code (from any
    /// downstream consumer) and at the reconstruction; returns `dL/dZ`
    /// through the encoder path only.
    pub fn backward(&mut self, grad_latent: &Tensor, grad_recon: &Tensor) -> Result<Tensor> {
        let mut g = self.decoder.backward(grad_recon)?;
        g.add_assign(grad_latent)?;
        self.encoder.backward(&g)
    }

    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut p = self.encoder.relu_pattern();
        p.extend(self.decoder.relu_pattern());
        p
    }
}

impl Module for Autoencoder {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p
    }
}

pub fn ae_forward(ae: &Autoencoder, z: &Tensor) -> Result<(Tensor, Tensor)> {
    ae.apply(z)
}

/// Per-sample squared Euclidean distance `‖Z_i − Ẑ_i‖²`.
pub fn reconstruction_error(z: &Tensor, recon: &Tensor) -> Result<Vec<f64>> {
    if z.shape() != recon.shape() {
        return Err(Error::dim("reconstruction error", shape_str(z.shape()), shape_str(recon.shape())));
    }
    Ok((0..z.rows())
        .map(|r| {
            z.row(r)
                .iter()
                .zip(recon.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyThreshold {
    pub tau: f64,
    pub quantile: f64,
    pub calibration_count: usize,
}

/// Linearly interpolated empirical quantile of the errors:
/// with `e` sorted and `h = (n−1)q`, `τ = e[⌊h⌋] + (h−⌊h⌋)(e[⌊h⌋+1] − e[⌊h⌋])`.
pub fn calibrate_threshold(errors: &[f64], quantile: f64) -> Result<AnomalyThreshold> {
    if errors.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::Calibration(format!(
            "need at least {MIN_CALIBRATION_SAMPLES} errors, got {}",
            errors.len()
        )));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Calibration(format!("quantile {quantile} outside [0, 1]")));
    }
    if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::Calibration("errors must be finite and nonnegative".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * quantile;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let tau = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
    Ok(AnomalyThreshold {
        tau,
        quantile,
        calibration_count: errors.len(),
    })
}

/// Strictly above the threshold.
pub fn flag_anomaly(error: f64, threshold: &AnomalyThreshold) -> bool {
    error > threshold.tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Differentiable, GradCheckOptions};
    use crate::rng::{stream, Purpose};

    fn cfg(input: usize, latent: usize) -> AeConfig {
        AeConfig {
            input_dim: input,
            latent_dim: latent,
            threshold_quantile: 0.95,
        }
    }

    #[test]
    fn shape_contract() {
        let mut rng = stream(1, Purpose::Init, 0);
        let ae = Autoencoder::new(cfg(64, 16), &mut rng).unwrap();
        let (z, r) = ae.apply(&Tensor::filled(&[4, 64], 0.1)).unwrap();
        assert_eq!(z.shape(), &[4, 16]);
        assert_eq!(r.shape(), &[4, 64]);
        assert!(ae.apply(&Tensor::zeros(&[4, 63])).is_err());
    }

    #[test]
    fn zero_parameters_reconstruct_zero() {
        let mut rng = stream(1, Purpose::Init, 0);
        let mut ae = Autoencoder::new(cfg(6, 2), &mut rng).unwrap();
        for p in ae.parameters_mut() {
            p.value.fill(0.0);
        }
        let x = Tensor::matrix(2, 6, (0..12).map(|i| i as f64 - 5.0).collect()).unwrap();
        let (_, r) = ae.apply(&x).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_requires_compression() {
        assert!(cfg(8, 8).validate().is_err());
        assert!(cfg(8, 0).validate().is_err());
        assert!(AeConfig { threshold_quantile: 1.0, ..cfg(8, 2) }.validate().is_err());
    }

    #[test]
    fn reconstruction_error_examples() {
        let z = Tensor::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap();
        assert_eq!(reconstruction_error(&z, &z).unwrap(), vec![0.0, 0.0]);
        let e = reconstruction_error(&z, &Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(e, vec![5.0, 25.0]);
        assert_eq!(e.iter().sum::<f64>() / 2.0, 15.0);
        let unit = reconstruction_error(
            &Tensor::from_rows(&[vec![1., 0.]]).unwrap(),
            &Tensor::zeros(&[1, 2]),
        )
        .unwrap();
        assert_eq!(unit, vec![1.0]);
        assert!(reconstruction_error(&z, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_threshold(&[2.0; 10], 0.3).unwrap().tau, 2.0);
        let ten: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert!((calibrate_threshold(&ten, 0.5).unwrap().tau - 5.5).abs() < 1e-12);
        let t = calibrate_threshold(&ten, 0.9).unwrap();
        assert!((t.tau - 9.1).abs() < 1e-12);
        assert_eq!(t.calibration_count, 10);
        assert!(matches!(
            calibrate_threshold(&[1.0; 9], 0.5).unwrap_err(),
            Error::Calibration(_)
        ));
        assert!(calibrate_threshold(&[-1.0; 10], 0.5).is_err());
    }

    #[test]
    fn strict_flag_boundary() {
        let th = AnomalyThreshold {
            tau: 2.5,
            quantile: 0.95,
            calibration_count: 10,
        };
        assert!(!flag_anomaly(2.5, &th));
        assert!(flag_anomaly(2.5 + 1e-9, &th));
    }

    struct AeLoss<'a>(&'a mut Autoencoder);

    impl Differentiable for AeLoss<'_> {
        fn loss(&mut self, z: &Tensor) -> Result<f64> {
            let (_, r) = self.0.apply(z)?;
            Ok(reconstruction_error(z, &r)?.iter().sum::<f64>() / z.rows() as f64)
        }

        fn loss_and_grad(&mut self, z: &Tensor) -> Result<(f64, Tensor)> {
            let (latent, r) = self.0.forward(z)?;
            let n = z.rows() as f64;
            let loss = reconstruction_error(z, &r)?.iter().sum::<f64>() / n;
            let mut diff = r.sub(z)?;
            diff.scale(2.0 / n);
            let mut dz = self.0.backward(&Tensor::zeros(latent.shape()), &diff)?;
            diff.scale(-1.0);
            dz.add_assign(&diff)?;
            Ok((loss, dz))
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            self.0.parameters_mut()
        }

        fn relu_pattern(&mut self, z: &Tensor) -> Result<Vec<bool>> {
            self.0.forward(z)?;
            Ok(self.0.relu_pattern())
        }
    }

    #[test]
    fn reconstruction_gradient_check() {
        let mut rng = stream(17, Purpose::Init, 0);
        let mut ae = Autoencoder::new(cfg(64, 16), &mut rng).unwrap();
        let z = Tensor::matrix(4, 64, (0..256).map(|i| (i as f64 * 0.23).sin().abs()).collect()).unwrap();
        let err = grad_check(&mut AeLoss(&mut ae), &z, &GradCheckOptions::default()).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
