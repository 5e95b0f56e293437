use rand::Rng;

use super::{glorot_uniform, Activation, Module, Parameter};
use crate::error::{Error, Result};
use crate::tensor::{shape_str, Tensor};

/// Fully connected layer `σ(xW + b)` applied row-wise.
///
/// `weight` is stored `[in_dim × out_dim]` so a batch `[n × in_dim]` maps to
/// `[n × out_dim]` by a plain matrix product. Inputs of higher rank are
/// treated as a stack of rows over their last axis.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Parameter,
    pub bias: Option<Parameter>,
    pub activation: Activation,
    cache: Option<DenseCache>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Tensor,
    pre: Tensor,
    output: Tensor,
}

impl DenseLayer {
    pub fn new(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        DenseLayer::from_parts(
            name,
            glorot_uniform(in_dim, out_dim, rng),
            Tensor::zeros(&[out_dim]),
            activation,
        )
        .expect("glorot weights are well-formed")
    }

    pub fn from_parts(
        name: &str,
        weight: Tensor,
        bias: Tensor,
        activation: Activation,
    ) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.cols()] {
            return Err(Error::dim(
                format!("dense layer {name}"),
                "weight [in×out] and bias [out]",
                format!("{} and {}", shape_str(weight.shape()), shape_str(bias.shape())),
            ));
        }
        Ok(DenseLayer {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Some(Parameter::new(format!("{name}.bias"), bias)),
            activation,
            cache: None,
        })
    }

    /// Layer without a bias term, `σ(xW)`.
    pub fn new_unbiased(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layer = DenseLayer::new(name, in_dim, out_dim, activation, rng);
        layer.bias = None;
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    fn pre_activation(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim(
                format!("{} input", self.weight.name),
                format!("[… × {}]", self.in_dim()),
                shape_str(x.shape()),
            ));
        }
        x.ensure_finite(&self.weight.name)?;
        let mut pre = x.matmul(&self.weight.value)?;
        if let Some(bias) = &self.bias {
            let b = bias.value.data();
            for r in 0..pre.rows() {
                for (v, bias) in pre.row_mut(r).iter_mut().zip(b) {
                    *v += bias;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_dim();
        pre.reshape(&shape)
    }

    /// Inference without caching.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let act = self.activation;
        Ok(self.pre_activation(x)?.map(|v| act.apply(v)))
    }

    /// Training forward pass; caches what `backward` needs.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let pre = self.pre_activation(x)?;
        let act = self.activation;
        let output = pre.map(|v| act.apply(v));
        self.cache = Some(DenseCache {
            input: x.clone(),
            pre,
            output: output.clone(),
        });
        Ok(output)
    }

    /// Accumulates weight/bias gradients and returns the gradient w.r.t. the
    /// input of the most recent `forward`.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::State(format!("{}: backward called before forward", self.weight.name))
        })?;
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::dim(
                format!("{} upstream gradient", self.weight.name),
                shape_str(cache.output.shape()),
                shape_str(grad_out.shape()),
            ));
        }
        let act = self.activation;
        let mut dpre = grad_out.clone();
        if act != Activation::Identity {
            for ((g, &x), &y) in dpre
                .data_mut()
                .iter_mut()
                .zip(cache.pre.data())
                .zip(cache.output.data())
            {
                *g *= act.derivative(x, y);
            }
        }
        let dw = cache.input.matmul_tn(&dpre)?;
        self.weight.grad.add_assign(&dw)?;
        if let Some(bias) = &mut self.bias {
            bias.grad.add_assign(&dpre.sum_rows())?;
        }
        let dx = dpre.matmul_nt(&self.weight.value)?;
        dx.reshape(cache.input.shape())
    }

    /// Which relu units were active in the last cached forward pass.
    pub fn relu_pattern(&self) -> Vec<bool> {
        match (&self.cache, self.activation) {
            (Some(c), Activation::Relu) => c.pre.data().iter().map(|&v| v > 0.0).collect(),
            _ => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Module for DenseLayer {
    fn parameters(&self) -> Vec<&Parameter> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

pub fn dense_forward(layer: &mut DenseLayer, x: &Tensor) -> Result<Tensor> {
    layer.forward(x)
}

pub fn dense_backward(layer: &mut DenseLayer, grad_out: &Tensor) -> Result<Tensor> {
    layer.backward(grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check::{grad_check, Differentiable, GradCheckOptions};
    use crate::rng::{stream, Purpose};

    fn layer(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> DenseLayer {
        DenseLayer::from_parts(
            "t",
            Tensor::from_rows(&w).unwrap(),
            Tensor::vector(b).unwrap(),
            act,
        )
        .unwrap()
    }

    fn m(rows: Vec<Vec<f64>>) -> Tensor {
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut l = layer(vec![vec![1., 0.], vec![0., 1.]], vec![0., 0.], Activation::Relu);
        let y = l.forward(&m(vec![vec![1., 2.]])).unwrap();
        assert_eq!(y.data(), &[1., 2.]);
    }

    #[test]
    fn relu_clamps_negative() {
        let l = layer(vec![vec![1.]], vec![0.], Activation::Relu);
        assert_eq!(l.apply(&m(vec![vec![-3.]])).unwrap().data(), &[0.]);
    }

    #[test]
    fn half_weights_plus_bias() {
        // [1,1]·[[.5,.5],[.5,.5]] + [1,1] = [2,2]
        let l = layer(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1., 1.], Activation::Identity);
        assert_eq!(l.apply(&m(vec![vec![1., 1.]])).unwrap().data(), &[2., 2.]);
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let mut l = layer(vec![vec![1., 0.], vec![0., 1.]], vec![0., 0.], Activation::Relu);
        let err = l.forward(&m(vec![vec![1., 2., 3.]])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }), "{err}");
        assert!(err.to_string().contains("[1×3]"));
        let err = l.forward(&m(vec![vec![f64::NAN, 0.]])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut l = layer(vec![vec![1.]], vec![0.], Activation::Relu);
        let err = l.backward(&m(vec![vec![1.]])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn identity_backward_passes_gradient() {
        let mut l = layer(vec![vec![1., 0.], vec![0., 1.]], vec![0., 0.], Activation::Identity);
        l.forward(&m(vec![vec![3., 4.]])).unwrap();
        let gx = l.backward(&m(vec![vec![1., 0.]])).unwrap();
        assert_eq!(gx.data(), &[1., 0.]);
        assert_eq!(l.bias.as_ref().unwrap().grad.data(), &[1., 0.]);
        assert_eq!(l.weight.grad.data(), &[3., 0., 4., 0.]);
    }

    #[test]
    fn relu_gate_blocks_negative_preactivation() {
        // Identity weights so the gate is visible directly in grad_in.
        let mut l = layer(vec![vec![1., 0.], vec![0., 1.]], vec![0., 0.], Activation::Relu);
        l.forward(&m(vec![vec![-1., 2.]])).unwrap();
        let gx = l.backward(&m(vec![vec![1., 1.]])).unwrap();
        assert_eq!(gx.data(), &[0., 1.]);
    }

    #[test]
    fn identity_layer_is_identity_on_any_input() {
        let l = DenseLayer::from_parts(
            "id",
            Tensor::identity(3),
            Tensor::zeros(&[3]),
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor::matrix(2, 3, vec![-1.5, 0.0, 2.25, 1e6, -1e-6, 3.0]).unwrap();
        assert_eq!(l.apply(&x).unwrap(), x);
    }

    struct SquaredDense {
        layer: DenseLayer,
    }

    impl Differentiable for SquaredDense {
        fn loss(&mut self, input: &Tensor) -> Result<f64> {
            let y = self.layer.apply(input)?;
            Ok(0.5 * y.data().iter().map(|v| v * v).sum::<f64>())
        }

        fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
            let y = self.layer.forward(input)?;
            let loss = 0.5 * y.data().iter().map(|v| v * v).sum::<f64>();
            let gx = self.layer.backward(&y)?;
            Ok((loss, gx))
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            self.layer.parameters_mut()
        }
    }

    #[test]
    fn random_layer_matches_finite_differences() {
        for act in [Activation::Relu, Activation::Identity, Activation::Sigmoid] {
            let mut rng = stream(11, Purpose::Init, 0);
            let mut frag = SquaredDense {
                layer: DenseLayer::new("g", 3, 2, act, &mut rng),
            };
            let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())
                .unwrap();
            let err = grad_check(&mut frag, &x, &GradCheckOptions::default()).unwrap();
            assert!(err < 1e-6, "{act:?}: {err}");
        }
    }
}
