//! Standalone binary cross-entropy on already-computed probabilities.
//!
//! The training path differentiates the fused logit form on the tape; this
//! helper scores probability outputs (validation, evaluation reports) and
//! clamps them away from 0 and 1 so the logs stay finite.

use crate::NetError;

const CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of `probs` against 0/1 `labels`.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64, NetError> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(NetError::ShapeMismatch(format!(
            "{} probabilities against {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut acc = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        if !p.is_finite() {
            return Err(NetError::ShapeMismatch("non-finite probability".into()));
        }
        if *y > 1 {
            return Err(NetError::ShapeMismatch(format!("label {y} is not 0 or 1")));
        }
        let p = p.clamp(CLAMP, 1.0 - CLAMP);
        acc -= if *y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(acc / probs.len() as f64)
}
