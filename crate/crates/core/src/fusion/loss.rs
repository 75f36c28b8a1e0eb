//! Class-weighted cross-entropy.

use candle_core::{DType, Tensor};

use crate::class::NUM_CLASSES;
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

fn check_labels(labels: &[usize]) -> Result<()> {
    match labels.iter().find(|&&y| y >= NUM_CLASSES) {
        Some(&y) => Err(Error::InvalidLabel(y)),
        None => Ok(()),
    }
}

/// `−(1/N)·Σ w[y]·ln p[y]` on probabilities, with `p` clamped at 1e-12.
pub fn weighted_cross_entropy(probs: &[[f64; NUM_CLASSES]], labels: &[usize], w: &[f64; NUM_CLASSES]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Empty("loss over zero samples".into()));
    }
    check_labels(labels)?;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -w[y] * p[y].max(PROB_FLOOR).ln())
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Same loss from an `N×3` logit tensor through log-softmax, so it never
/// forms probabilities that could underflow. Differentiable.
pub fn weighted_cross_entropy_logits(logits: &Tensor, labels: &[usize], w: &[f64; NUM_CLASSES]) -> Result<Tensor> {
    let (n, k) = logits.dims2()?;
    if k != NUM_CLASSES || n != labels.len() {
        return Err(Error::Shape(format!(
            "logits {:?} do not match {} labels over {NUM_CLASSES} classes",
            logits.dims(),
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Empty("loss over zero samples".into()));
    }
    check_labels(labels)?;
    let mut mask = vec![0f64; n * k];
    for (i, &y) in labels.iter().enumerate() {
        mask[i * k + y] = w[y] / n as f64;
    }
    let mask = Tensor::from_vec(mask, (n, k), logits.device())?.to_dtype(logits.dtype())?;
    let log_p = candle_nn::ops::log_softmax(logits, 1)?;
    Ok((log_p * mask)?.sum_all()?.neg()?)
}

/// Closed-form gradient of the logit loss: `(w[y]/N)·(softmax(z) − onehot(y))`.
pub fn weighted_cross_entropy_logit_grad(
    logits: &[[f64; NUM_CLASSES]],
    labels: &[usize],
    w: &[f64; NUM_CLASSES],
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    check_labels(labels)?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let p = super::Prediction::from_logits(*z).probs;
            let mut g = [0.0; NUM_CLASSES];
            for c in 0..NUM_CLASSES {
                let t = if c == y { 1.0 } else { 0.0 };
                g[c] = w[y] / n * (p[c] - t);
            }
            g
        })
        .collect())
}

/// Scalar value of a one-element tensor.
pub fn loss_scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
