use crate::error::{Error, Result};
use crate::tensor::{shape_str, Tensor};

/// Probabilities are clamped to at least this before taking the log.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.cols() == 0 {
        return Err(Error::dim("softmax", "at least one column", shape_str(x.shape())));
    }
    x.ensure_finite("softmax")?;
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

fn check_labels(probs: &Tensor, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::dim(
            "cross entropy labels",
            format!("{} labels", probs.rows()),
            format!("{} labels", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= probs.cols()) {
        return Err(Error::InvalidLabel { label });
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    for r in 0..probs.rows() {
        let s: f64 = probs.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-9 || probs.row(r).iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution(format!(
                "row {r} sums to {s}"
            )));
        }
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| -probs.row(r)[l].max(CE_PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of the mean cross entropy with respect to the softmax logits,
/// `(p - onehot) / batch`, scaled by `weight`.
pub fn cross_entropy_grad(probs: &Tensor, labels: &[usize], weight: f64) -> Result<Tensor> {
    check_labels(probs, labels)?;
    let mut g = probs.clone();
    let scale = weight / labels.len() as f64;
    for (r, &l) in labels.iter().enumerate() {
        let row = g.row_mut(r);
        row[l] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(g)
}
