use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a `batch x classes` matrix.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if !logits.is_matrix() {
        return Err(Error::dim("softmax expects batch x classes logits"));
    }
    let c = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood of `targets` under `softmax(logits)`.
///
/// Returns the loss together with its gradient with respect to the logits,
/// `(softmax - onehot) / batch`.
pub fn nll_softmax_loss(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    if !logits.is_matrix() {
        return Err(Error::dim("loss expects batch x classes logits"));
    }
    let (b, c) = (logits.rows(), logits.cols());
    if targets.len() != b {
        return Err(Error::dim(format!("{} targets for a batch of {b}", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::invalid(format!("target {bad} outside [0, {c})")));
    }
    let mut grad = Tensor::zeros(&[b, c]);
    let mut total = 0.0;
    for (n, &t) in targets.iter().enumerate() {
        let row = logits.row(n);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[t];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let onehot = if j == t { 1.0 } else { 0.0 };
            grad.set(n, j, (p - onehot) / b as f64);
        }
    }
    let loss = total / b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("nll_softmax_loss"));
    }
    Ok((loss, grad))
}
