use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::EncoderBlock;
use super::positional::PositionalEncoding;
use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Module, Parameter};
use crate::tensor::{shape_str, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    /// Per-quarter feature count; zero in a config file means "infer".
    pub series_dim: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub d_ff: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            series_dim: 0,
            seq_len: 12,
            d_model: 32,
            n_heads: 4,
            n_blocks: 2,
            d_ff: 64,
        }
    }
}

impl TransformerConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.series_dim == 0 || self.seq_len == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("transformer dimensions must all be ≥ 1".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "transformer.d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    pub config: TransformerConfig,
    /// `W_e [series_dim × d_model]`.
    pub embedding: Parameter,
    pub positional: PositionalEncoding,
    pub blocks: Vec<EncoderBlock>,
    cache: Option<EncoderCache>,
}

#[derive(Debug, Clone)]
struct EncoderCache {
    input: Tensor,
    /// Per-sample pooling weight for each time step (1/count or 0).
    pool: Vec<f64>,
}

/// Pooling weights from an optional `[batch × seq]` mask (nonzero = real).
fn pool_weights(batch: usize, seq: usize, mask: Option<&Tensor>) -> Result<Vec<f64>> {
    let Some(mask) = mask else {
        return Ok(vec![1.0 / seq as f64; batch * seq]);
    };
    if mask.shape() != [batch, seq] {
        return Err(Error::dim("padding mask", shape_str(&[batch, seq]), shape_str(mask.shape())));
    }
    let mut w = vec![0.0; batch * seq];
    for b in 0..batch {
        let real = mask.row(b).iter().filter(|&&m| m != 0.0).count();
        if real == 0 {
            return Err(Error::InvalidInput(format!("sample {b} has no unpadded time steps")));
        }
        for (t, &m) in mask.row(b).iter().enumerate() {
            if m != 0.0 {
                w[b * seq + t] = 1.0 / real as f64;
            }
        }
    }
    Ok(w)
}

impl TemporalEncoder {
    pub fn new(config: TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let embedding = Parameter::new(
            "temporal.embedding",
            glorot_uniform(config.series_dim, config.d_model, rng),
        );
        let blocks = (0..config.n_blocks)
            .map(|i| EncoderBlock::new(&format!("temporal.block{i}"), config.d_model, config.n_heads, config.d_ff, rng))
            .collect();
        Ok(TemporalEncoder {
            positional: PositionalEncoding::sinusoidal(config.seq_len, config.d_model),
            config,
            embedding,
            blocks,
            cache: None,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.d_model
    }

    fn check(&self, x_t: &Tensor) -> Result<(usize, usize)> {
        match *x_t.shape() {
            [b, t, s] if s == self.config.series_dim && t == self.positional.seq_len() => Ok((b, t)),
            _ => Err(Error::dim(
                "temporal input",
                format!("[batch × {} × {}]", self.positional.seq_len(), self.config.series_dim),
                shape_str(x_t.shape()),
            )),
        }
    }

    /// `Z_0 = X_t W_e + PE`, broadcast over the batch.
    pub fn embed(&self, x_t: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check(x_t)?;
        x_t.ensure_finite("temporal input")?;
        let mut z = x_t.matmul(&self.embedding.value)?;
        let pe = self.positional.table();
        for s in 0..b {
            for p in 0..t {
                for (v, e) in z.row_mut(s * t + p).iter_mut().zip(pe.row(p)) {
                    *v += e;
                }
            }
        }
        z.reshape(&[b, t, self.config.d_model])
    }

    fn pool(&self, z: &Tensor, weights: &[f64], batch: usize, seq: usize) -> Result<Tensor> {
        let d = self.config.d_model;
        let mut h = Tensor::zeros(&[batch, d]);
        for b in 0..batch {
            for t in 0..seq {
                let w = weights[b * seq + t];
                if w == 0.0 {
                    continue;
                }
                let src = z.row(b * seq + t).to_vec();
                for (o, v) in h.row_mut(b).iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        Ok(h)
    }

    pub fn encode(&self, x_t: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t) = self.check(x_t)?;
        let weights = pool_weights(b, t, mask)?;
        let mut z = self.embed(x_t)?;
        for block in &self.blocks {
            z = block.apply(&z)?;
        }
        self.pool(&z, &weights, b, t)
    }

    pub fn forward(&mut self, x_t: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t) = self.check(x_t)?;
        let weights = pool_weights(b, t, mask)?;
        let mut z = self.embed(x_t)?;
        for block in &mut self.blocks {
            z = block.forward(&z)?;
        }
        let h = self.pool(&z, &weights, b, t)?;
        self.cache = Some(EncoderCache {
            input: x_t.clone(),
            pool: weights,
        });
        Ok(h)
    }

    /// Returns the gradient with respect to `x_t`.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("temporal encoder: backward called before forward".into()))?;
        let shape = cache.input.shape().to_vec();
        let (batch, seq, d) = (shape[0], shape[1], self.config.d_model);
        if grad.shape() != [batch, d] {
            return Err(Error::dim("temporal upstream gradient", shape_str(&[batch, d]), shape_str(grad.shape())));
        }
        let mut dz = Tensor::zeros(&[batch, seq, d]);
        for b in 0..batch {
            for t in 0..seq {
                let w = cache.pool[b * seq + t];
                for (o, g) in dz.row_mut(b * seq + t).iter_mut().zip(grad.row(b)) {
                    *o = w * g;
                }
            }
        }
        for block in self.blocks.iter_mut().rev() {
            dz = block.backward(&dz)?;
        }
        let dw = cache.input.matmul_tn(&dz)?;
        self.embedding.grad.add_assign(&dw)?;
        dz.matmul_nt(&self.embedding.value)?.reshape(&shape)
    }
}

impl TemporalEncoder {
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks.iter().flat_map(|b| b.relu_pattern()).collect()
    }
}

impl Module for TemporalEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        std::iter::once(&self.embedding)
            .chain(self.blocks.iter().flat_map(|b| b.parameters()))
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.embedding];
        for b in &mut self.blocks {
            out.extend(b.parameters_mut());
        }
        out
    }
}

pub fn embed_sequence(encoder: &TemporalEncoder, x_t: &Tensor) -> Result<Tensor> {
    encoder.embed(x_t)
}

pub fn encode_temporal(encoder: &TemporalEncoder, x_t: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    encoder.encode(x_t, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Differentiable, GradCheckOptions};
    use crate::rng::{stream, Purpose};

    fn cfg(s: usize, t: usize, d: usize, heads: usize, blocks: usize) -> TransformerConfig {
        TransformerConfig {
            series_dim: s,
            seq_len: t,
            d_model: d,
            n_heads: heads,
            n_blocks: blocks,
            d_ff: 2 * d,
        }
    }

    fn seq(b: usize, t: usize, s: usize, k: f64) -> Tensor {
        Tensor::new(vec![b, t, s], (0..b * t * s).map(|i| (i as f64 * k).sin()).collect()).unwrap()
    }

    #[test]
    fn zero_embedding_yields_positional_table() {
        let mut rng = stream(1, Purpose::Init, 0);
        let mut enc = TemporalEncoder::new(cfg(4, 12, 8, 2, 0), &mut rng).unwrap();
        enc.embedding.value.fill(0.0);
        let z = enc.embed(&Tensor::zeros(&[2, 12, 4])).unwrap();
        assert_eq!(z.shape(), &[2, 12, 8]);
        assert_eq!(z.row(0), &[0., 1., 0., 1., 0., 1., 0., 1.]);
        assert_eq!(z.row(12 + 5), enc.positional.table().row(5));
    }

    #[test]
    fn embedding_adds_product_to_table() {
        let mut rng = stream(1, Purpose::Init, 0);
        let mut enc = TemporalEncoder::new(cfg(2, 1, 2, 1, 0), &mut rng).unwrap();
        enc.embedding.value = Tensor::identity(2);
        let z = enc.embed(&Tensor::new(vec![1, 1, 2], vec![1., 0.]).unwrap()).unwrap();
        assert_eq!(z.data(), &[1., 1.]);
    }

    #[test]
    fn default_shapes_and_errors() {
        let mut rng = stream(1, Purpose::Init, 0);
        let enc = TemporalEncoder::new(cfg(4, 12, 32, 4, 2), &mut rng).unwrap();
        assert_eq!(enc.embed(&seq(3, 12, 4, 0.1)).unwrap().shape(), &[3, 12, 32]);
        assert_eq!(enc.encode(&seq(3, 12, 4, 0.1), None).unwrap().shape(), &[3, 32]);
        let err = enc.embed(&seq(3, 10, 4, 0.1)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        assert!(TemporalEncoder::new(cfg(4, 12, 30, 4, 2), &mut rng).is_err());
    }

    #[test]
    fn single_step_pooling_is_identity() {
        let mut rng = stream(2, Purpose::Init, 0);
        let enc = TemporalEncoder::new(cfg(3, 1, 8, 2, 1), &mut rng).unwrap();
        let x = seq(2, 1, 3, 0.9);
        let z = enc.blocks[0].apply(&enc.embed(&x).unwrap()).unwrap();
        let h = enc.encode(&x, None).unwrap();
        assert_eq!(h.data(), z.data());
    }

    #[test]
    fn duplicated_series_give_identical_rows() {
        let mut rng = stream(2, Purpose::Init, 0);
        let enc = TemporalEncoder::new(cfg(4, 6, 8, 2, 2), &mut rng).unwrap();
        let one = seq(1, 6, 4, 0.3);
        let x = Tensor::new(vec![3, 6, 4], one.data().repeat(3)).unwrap();
        let h = enc.encode(&x, None).unwrap();
        assert_eq!(h.row(0), h.row(1));
        assert_eq!(h.row(0), h.row(2));
    }

    #[test]
    fn padded_positions_do_not_affect_pooling() {
        let mut rng = stream(2, Purpose::Init, 0);
        let enc = TemporalEncoder::new(cfg(2, 4, 4, 1, 0), &mut rng).unwrap();
        let x = seq(1, 4, 2, 0.5);
        let mask = Tensor::matrix(1, 4, vec![0., 1., 1., 1.]).unwrap();
        let h = enc.encode(&x, Some(&mask)).unwrap();
        let z = enc.embed(&x).unwrap();
        for j in 0..4 {
            let expect = (z.row(1)[j] + z.row(2)[j] + z.row(3)[j]) / 3.0;
            assert!((h.row(0)[j] - expect).abs() < 1e-15);
        }
        let empty = Tensor::zeros(&[1, 4]);
        assert!(enc.encode(&x, Some(&empty)).is_err());
    }

    #[test]
    fn duplicating_time_steps_keeps_block_free_mean() {
        let mut rng = stream(8, Purpose::Init, 0);
        let base = TemporalEncoder::new(cfg(3, 5, 6, 2, 0), &mut rng).unwrap();
        let x = seq(2, 5, 3, 0.7);
        let h = base.encode(&x, None).unwrap();

        let mut doubled = base.clone();
        let mut table = Vec::new();
        for p in 0..5 {
            table.extend_from_slice(base.positional.table().row(p));
            table.extend_from_slice(base.positional.table().row(p));
        }
        doubled.positional = PositionalEncoding::from_table(Tensor::matrix(10, 6, table).unwrap()).unwrap();
        let mut xd = Vec::new();
        for r in 0..10 {
            xd.extend_from_slice(x.row(r));
            xd.extend_from_slice(x.row(r));
        }
        let hd = doubled.encode(&Tensor::new(vec![2, 10, 3], xd).unwrap(), None).unwrap();
        assert!(h.max_abs_diff(&hd) < 1e-9);
    }

    struct Squares<'a> {
        enc: &'a mut TemporalEncoder,
        mask: Option<Tensor>,
    }

    impl Differentiable for Squares<'_> {
        fn loss(&mut self, x: &Tensor) -> Result<f64> {
            let h = self.enc.encode(x, self.mask.as_ref())?;
            Ok(0.5 * h.data().iter().map(|v| v * v).sum::<f64>())
        }

        fn loss_and_grad(&mut self, x: &Tensor) -> Result<(f64, Tensor)> {
            let h = self.enc.forward(x, self.mask.as_ref())?;
            let l = 0.5 * h.data().iter().map(|v| v * v).sum::<f64>();
            Ok((l, self.enc.backward(&h)?))
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            self.enc.parameters_mut()
        }

        fn relu_pattern(&mut self, x: &Tensor) -> Result<Vec<bool>> {
            self.enc.forward(x, self.mask.as_ref())?;
            Ok(self.enc.relu_pattern())
        }
    }

    #[test]
    fn default_config_gradient_check() {
        let mut rng = stream(13, Purpose::Init, 0);
        let mut enc = TemporalEncoder::new(cfg(4, 12, 32, 4, 2), &mut rng).unwrap();
        enc.config.d_ff = 64;
        let mut enc = TemporalEncoder::new(enc.config.clone(), &mut rng).unwrap();
        let x = seq(4, 12, 4, 0.37);
        let mut mask = Tensor::filled(&[4, 12], 1.0);
        mask.row_mut(3)[..3].fill(0.0);
        let rep = crate::nn::grad_check_report(
            &mut Squares { enc: &mut enc, mask: Some(mask) },
            &x,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
        assert!(rep.checked >= 50);
    }
}
