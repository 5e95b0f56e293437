use rand::Rng;

use super::attention::{attention_backward, attention_with_weights};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, LayerNorm, Module, Parameter};
use crate::tensor::{shape_str, Tensor};

/// Post-norm encoder block:
/// `Y = LN1(X + MHSA(X))`, `out = LN2(Y + FFN(Y))`.
///
/// Q/K/V projections are stored as single `[d_model × d_model]` layers whose
/// column groups of width `d_k` are the per-head projections.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub n_heads: usize,
    pub query: DenseLayer,
    pub key: DenseLayer,
    pub value: DenseLayer,
    pub output: DenseLayer,
    pub ff_hidden: DenseLayer,
    pub ff_out: DenseLayer,
    pub norm_attn: LayerNorm,
    pub norm_ff: LayerNorm,
    cache: Option<BlockCache>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    batch: usize,
    seq: usize,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights indexed `[b * n_heads + h]`.
    weights: Vec<Tensor>,
}

/// Copies the `rows × cols` block at (`row0`, `col0`) of a matrix view.
fn block_of(t: &Tensor, row0: usize, rows: usize, col0: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for r in row0..row0 + rows {
        data.extend_from_slice(&t.row(r)[col0..col0 + cols]);
    }
    Tensor::matrix(rows, cols, data).expect("block dims are positive")
}

fn write_block(dst: &mut Tensor, row0: usize, col0: usize, src: &Tensor) {
    for r in 0..src.rows() {
        dst.row_mut(row0 + r)[col0..col0 + src.cols()].copy_from_slice(src.row(r));
    }
}

impl EncoderBlock {
    pub fn new(name: &str, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        let id = Activation::Identity;
        EncoderBlock {
            n_heads,
            query: DenseLayer::new(&format!("{name}.query"), d_model, d_model, id, rng),
            // A key bias shifts every score in a softmax row equally, so it
            // would never receive gradient.
            key: DenseLayer::new_unbiased(&format!("{name}.key"), d_model, d_model, id, rng),
            value: DenseLayer::new(&format!("{name}.value"), d_model, d_model, id, rng),
            output: DenseLayer::new(&format!("{name}.attn_out"), d_model, d_model, id, rng),
            ff_hidden: DenseLayer::new(&format!("{name}.ff_hidden"), d_model, d_ff, Activation::Relu, rng),
            ff_out: DenseLayer::new(&format!("{name}.ff_out"), d_ff, d_model, id, rng),
            norm_attn: LayerNorm::new(&format!("{name}.norm_attn"), d_model),
            norm_ff: LayerNorm::new(&format!("{name}.norm_ff"), d_model),
            cache: None,
        }
    }

    pub fn d_model(&self) -> usize {
        self.query.in_dim()
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        match x.shape() {
            &[b, t, d] if d == self.d_model() => Ok((b, t)),
            other => Err(Error::dim(
                "encoder block input",
                format!("[batch × seq × {}]", self.d_model()),
                shape_str(other),
            )),
        }
    }

    /// Multi-head attention over each sample's sequence; returns the
    /// concatenated head outputs and the per-(sample, head) weights.
    fn multi_head(&self, q: &Tensor, k: &Tensor, v: &Tensor, batch: usize, seq: usize) -> Result<(Tensor, Vec<Tensor>)> {
        let dk = self.d_model() / self.n_heads;
        let mut concat = Tensor::zeros(q.shape());
        let mut weights = Vec::with_capacity(batch * self.n_heads);
        for b in 0..batch {
            for h in 0..self.n_heads {
                let (r0, c0) = (b * seq, h * dk);
                let res = attention_with_weights(
                    &block_of(q, r0, seq, c0, dk),
                    &block_of(k, r0, seq, c0, dk),
                    &block_of(v, r0, seq, c0, dk),
                )?;
                write_block(&mut concat, r0, c0, &res.output);
                weights.push(res.weights);
            }
        }
        Ok((concat, weights))
    }

    /// Attention weights for every (sample, head), without caching.
    pub fn attention_weights(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (b, t) = self.dims(x)?;
        let (q, k, v) = (self.query.apply(x)?, self.key.apply(x)?, self.value.apply(x)?);
        Ok(self.multi_head(&q, &k, &v, b, t)?.1)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = self.dims(x)?;
        let (q, k, v) = (self.query.apply(x)?, self.key.apply(x)?, self.value.apply(x)?);
        let (concat, _) = self.multi_head(&q, &k, &v, b, t)?;
        let attn = self.output.apply(&concat)?;
        let y = self.norm_attn.apply(&x.add(&attn)?)?;
        let ff = self.ff_out.apply(&self.ff_hidden.apply(&y)?)?;
        self.norm_ff.apply(&y.add(&ff)?)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = self.dims(x)?;
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let (concat, weights) = self.multi_head(&q, &k, &v, b, t)?;
        let attn = self.output.forward(&concat)?;
        let y = self.norm_attn.forward(&x.add(&attn)?)?;
        let hidden = self.ff_hidden.forward(&y)?;
        let ff = self.ff_out.forward(&hidden)?;
        let out = self.norm_ff.forward(&y.add(&ff)?)?;
        self.cache = Some(BlockCache {
            batch: b,
            seq: t,
            q,
            k,
            v,
            weights,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("encoder block: backward called before forward".into()))?;
        let g_ff_sum = self.norm_ff.backward(grad)?;
        let mut dy = self.ff_hidden.backward(&self.ff_out.backward(&g_ff_sum)?)?;
        dy.add_assign(&g_ff_sum)?;
        let g_attn_sum = self.norm_attn.backward(&dy)?;
        let d_concat = self.output.backward(&g_attn_sum)?;

        let dk = self.d_model() / self.n_heads;
        let seq = cache.seq;
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dkey = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        for b in 0..cache.batch {
            for h in 0..self.n_heads {
                let (r0, c0) = (b * seq, h * dk);
                let (gq, gk, gv) = attention_backward(
                    &block_of(&cache.q, r0, seq, c0, dk),
                    &block_of(&cache.k, r0, seq, c0, dk),
                    &block_of(&cache.v, r0, seq, c0, dk),
                    &cache.weights[b * self.n_heads + h],
                    &block_of(&d_concat, r0, seq, c0, dk),
                )?;
                write_block(&mut dq, r0, c0, &gq);
                write_block(&mut dkey, r0, c0, &gk);
                write_block(&mut dv, r0, c0, &gv);
            }
        }
        let mut dx = g_attn_sum;
        dx.add_assign(&self.query.backward(&dq)?)?;
        dx.add_assign(&self.key.backward(&dkey)?)?;
        dx.add_assign(&self.value.backward(&dv)?)?;
        Ok(dx)
    }
}

impl EncoderBlock {
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.ff_hidden.relu_pattern()
    }
}

impl Module for EncoderBlock {
    fn parameters(&self) -> Vec<&Parameter> {
        [&self.query, &self.key, &self.value, &self.output, &self.ff_hidden, &self.ff_out]
            .into_iter()
            .flat_map(|l| l.parameters())
            .chain(self.norm_attn.parameters())
            .chain(self.norm_ff.parameters())
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for l in [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
            &mut self.ff_hidden,
            &mut self.ff_out,
        ] {
            out.extend(l.parameters_mut());
        }
        out.extend(self.norm_attn.parameters_mut());
        out.extend(self.norm_ff.parameters_mut());
        out
    }
}
