use crate::error::{Error, Result};
use crate::nn::softmax_rows;
use crate::tensor::{shape_str, Tensor};

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Tensor,
    /// Row-stochastic `[n × n]` attention weights.
    pub weights: Tensor,
}

fn check(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<()> {
    if q.shape().len() != 2 || k.shape().len() != 2 || v.shape().len() != 2 {
        return Err(Error::dim(
            "attention",
            "matrices",
            format!("{} {} {}", shape_str(q.shape()), shape_str(k.shape()), shape_str(v.shape())),
        ));
    }
    if q.cols() != k.cols() {
        return Err(Error::dim(
            "attention Q/K inner width",
            format!("K width {}", q.cols()),
            format!("K {}", shape_str(k.shape())),
        ));
    }
    if k.rows() != v.rows() {
        return Err(Error::dim(
            "attention K/V rows",
            format!("V rows {}", k.rows()),
            format!("V {}", shape_str(v.shape())),
        ));
    }
    Ok(())
}

/// `softmax(Q Kᵀ / √d_k) V` with the weights retained.
pub fn attention_with_weights(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<AttentionOutput> {
    check(q, k, v)?;
    let mut scores = q.matmul_nt(k)?;
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    let weights = softmax_rows(&scores)?;
    let output = weights.matmul(v)?;
    Ok(AttentionOutput { output, weights })
}

pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    Ok(attention_with_weights(q, k, v)?.output)
}

/// Gradients `(dQ, dK, dV)` given the forward weights and `d output`.
pub fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    check(q, k, v)?;
    let dv = weights.matmul_tn(grad_out)?;
    let dp = grad_out.matmul_nt(v)?;
    let mut ds = dp.clone();
    for r in 0..ds.rows() {
        let p = weights.row(r);
        let dot: f64 = dp.row(r).iter().zip(p).map(|(a, b)| a * b).sum();
        for (g, &pw) in ds.row_mut(r).iter_mut().zip(p) {
            *g = pw * (*g - dot);
        }
    }
    ds.scale(1.0 / (q.cols() as f64).sqrt());
    let dq = ds.matmul(k)?;
    let dk = ds.matmul_tn(q)?;
    Ok((dq, dk, dv))
}
