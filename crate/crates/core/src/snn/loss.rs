//! Per-step cross-entropy summed over time.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[label]`, computed stably.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let ce = lse - logits[label];
    // Clamp rounding below zero but let NaN through so callers can detect it.
    if ce < 0.0 {
        0.0
    } else {
        ce
    }
}

pub(crate) fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Batch-mean of `Σ_t CE(softmax(ŷ_t), y)`; each tensor in `logits_per_step`
/// is `[batch, classes]`.
pub fn loss(logits_per_step: &[Tensor], labels: &[usize]) -> Result<f64> {
    let Some(first) = logits_per_step.first() else {
        return Ok(0.0);
    };
    let (batch, classes) = (first.shape()[0], first.shape()[1]);
    check_labels(labels, batch, classes)?;
    let mut total = 0.0;
    for logits in logits_per_step {
        for (b, &y) in labels.iter().enumerate() {
            total += cross_entropy(&logits.data()[b * classes..(b + 1) * classes], y);
        }
    }
    Ok(total / batch as f64)
}
