//! Multilayer fully connected encoder for static enterprise attributes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Module, Parameter};
use crate::tensor::{shape_str, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DnnConfig {
    /// Width of the preprocessed static feature vector. Resolved from the
    /// preprocessor at training time; zero in a config file means "infer".
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl Default for DnnConfig {
    fn default() -> Self {
        DnnConfig {
            input_dim: 0,
            hidden_dims: vec![64, 32],
            output_dim: 32,
        }
    }
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("dnn.hidden_dims needs at least one layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("dnn dimensions must all be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Stack of relu layers `input → hidden… → output`.
#[derive(Debug, Clone)]
pub struct DnnEncoder {
    pub config: DnnConfig,
    pub layers: Vec<DenseLayer>,
}

impl DnnEncoder {
    pub fn new(config: DnnConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend(&config.hidden_dims);
        dims.push(config.output_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::new(&format!("static.layer{i}"), w[0], w[1], Activation::Relu, rng))
            .collect();
        Ok(DnnEncoder { config, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    fn check(&self, x_s: &Tensor) -> Result<()> {
        if x_s.shape().len() != 2 || x_s.cols() != self.config.input_dim {
            return Err(Error::dim(
                "static features",
                format!("[batch × {}]", self.config.input_dim),
                shape_str(x_s.shape()),
            ));
        }
        Ok(())
    }

    pub fn encode(&self, x_s: &Tensor) -> Result<Tensor> {
        self.check(x_s)?;
        let mut h = x_s.clone();
        for layer in &self.layers {
            h = layer.apply(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x_s: &Tensor) -> Result<Tensor> {
        self.check(x_s)?;
        let mut h = x_s.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }
}

impl DnnEncoder {
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|l| l.relu_pattern()).collect()
    }
}

impl Module for DnnEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

pub fn encode_static(encoder: &DnnEncoder, x_s: &Tensor) -> Result<Tensor> {
    encoder.encode(x_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Differentiable, GradCheckOptions};
    use crate::rng::{stream, Purpose};

    fn cfg(input: usize, hidden: Vec<usize>, out: usize) -> DnnConfig {
        DnnConfig {
            input_dim: input,
            hidden_dims: hidden,
            output_dim: out,
        }
    }

    #[test]
    fn identity_single_layer() {
        let mut rng = stream(1, Purpose::Init, 0);
        let mut enc = DnnEncoder::new(cfg(2, vec![2], 2), &mut rng).unwrap();
        enc.layers.truncate(1);
        enc.layers[0] =
            DenseLayer::from_parts("l", Tensor::identity(2), Tensor::zeros(&[2]), Activation::Relu)
                .unwrap();
        let x = Tensor::from_rows(&[vec![0.5, 1.0]]).unwrap();
        assert_eq!(enc.encode(&x).unwrap().data(), &[0.5, 1.0]);
    }

    #[test]
    fn zero_weights_give_relu_of_bias() {
        let mut rng = stream(1, Purpose::Init, 0);
        let mut enc = DnnEncoder::new(cfg(3, vec![2], 2), &mut rng).unwrap();
        enc.layers.truncate(1);
        enc.layers[0] = DenseLayer::from_parts(
            "l",
            Tensor::zeros(&[3, 2]),
            Tensor::vector(vec![-0.5, 0.75]).unwrap(),
            Activation::Relu,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![9.0, 9.0, 9.0]]).unwrap();
        assert_eq!(enc.encode(&x).unwrap().data(), &[0.0, 0.75, 0.0, 0.75]);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let mut rng = stream(1, Purpose::Init, 0);
        let enc = DnnEncoder::new(cfg(4, vec![8], 2), &mut rng).unwrap();
        let err = enc.encode(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[batch × 4]") && msg.contains("[2×3]"), "{msg}");
    }

    #[test]
    fn config_needs_a_hidden_layer() {
        assert!(cfg(3, vec![], 2).validate().is_err());
        assert!(cfg(3, vec![0], 2).validate().is_err());
    }

    #[test]
    fn rows_do_not_interact() {
        let mut rng = stream(5, Purpose::Init, 0);
        let enc = DnnEncoder::new(cfg(3, vec![6, 4], 3), &mut rng).unwrap();
        let x = Tensor::matrix(3, 3, (0..9).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = enc.encode(&x).unwrap();
        let yp = enc.encode(&x.select(&[2, 0, 1]).unwrap()).unwrap();
        assert_eq!(yp, y.select(&[2, 0, 1]).unwrap());
        let single = enc.encode(&x.select(&[1]).unwrap()).unwrap();
        assert_eq!(single.shape(), &[1, 3]);
        assert_eq!(single.data(), y.row(1));
    }

    pub(crate) struct SumOfSquares<'a>(pub &'a mut DnnEncoder);

    impl Differentiable for SumOfSquares<'_> {
        fn loss(&mut self, input: &Tensor) -> Result<f64> {
            Ok(self.0.encode(input)?.data().iter().map(|v| v * v).sum::<f64>() * 0.5)
        }

        fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
            let h = self.0.forward(input)?;
            let loss = h.data().iter().map(|v| v * v).sum::<f64>() * 0.5;
            Ok((loss, self.0.backward(&h)?))
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            self.0.parameters_mut()
        }

        fn relu_pattern(&mut self, input: &Tensor) -> Result<Vec<bool>> {
            self.0.forward(input)?;
            Ok(self.0.relu_pattern())
        }
    }

    #[test]
    fn default_config_shape_and_gradient() {
        let mut rng = stream(21, Purpose::Init, 0);
        let mut enc = DnnEncoder::new(
            DnnConfig {
                input_dim: 10,
                ..DnnConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        let x = Tensor::matrix(4, 10, (0..40).map(|i| ((i * 13 % 17) as f64 - 8.0) / 5.0).collect())
            .unwrap();
        assert_eq!(enc.encode(&x).unwrap().shape(), &[4, 32]);
        let err = grad_check(&mut SumOfSquares(&mut enc), &x, &GradCheckOptions::default()).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
