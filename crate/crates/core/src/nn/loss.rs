use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Row-wise softmax computed through log-sum-exp.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
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
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)` and its
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if n == 0 || labels.len() != n {
        return Err(Error::shape("cross_entropy labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Data(format!("label {bad} outside [0, {c})")));
    }
    let mut grad = softmax(logits);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        total += log_sum_exp(row) - row[y];
        grad[(i, y)] -= 1.0;
    }
    grad.scale(1.0 / n as f64);
    // Rounding can push lse - z a hair below zero at exact one-hot saturation.
    Ok(((total / n as f64).max(0.0), grad))
}

/// Discriminator objective `mean log(1 - D(f^g)) + mean log(D(f^l))` and its
/// gradients with respect to each probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscLoss {
    pub loss: f64,
    pub grad_global: Vec<f64>,
    pub grad_local: Vec<f64>,
}

pub fn disc_loss(global_probs: &[f64], local_probs: &[f64]) -> DiscLoss {
    let ng = global_probs.len() as f64;
    let nl = local_probs.len() as f64;
    let lg: f64 = global_probs.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / ng;
    let ll: f64 = local_probs.iter().map(|p| p.ln()).sum::<f64>() / nl;
    DiscLoss {
        loss: lg + ll,
        grad_global: global_probs.iter().map(|p| -1.0 / ((1.0 - p) * ng)).collect(),
        grad_local: local_probs.iter().map(|p| 1.0 / (p * nl)).collect(),
    }
}

/// Regularizer `mean log(1 - D(f^l))` and its gradient with respect to each
/// probability; descending it pushes local features toward the region the
/// discriminator attributes to the global extractor.
pub fn reg_loss(local_probs: &[f64]) -> (f64, Vec<f64>) {
    let n = local_probs.len() as f64;
    let loss = local_probs.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / n;
    let grad = local_probs.iter().map(|p| -1.0 / ((1.0 - p) * n)).collect();
    (loss, grad)
}
