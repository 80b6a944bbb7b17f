//! Masked softmax and the focal loss.

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` inside the loss.
pub const EPSILON: f64 = 1e-7;

/// Softmax over the entries where `legal` is true. Illegal entries get
/// exactly 0. Fails when no entry is legal.
pub fn masked_softmax(logits: &[f64], legal: &[bool]) -> Result<Vec<f64>> {
    debug_assert_eq!(logits.len(), legal.len());
    let max = logits
        .iter()
        .zip(legal)
        .filter(|(_, &ok)| ok)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Classifier("no legal label for this NSW".into()));
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(legal)
        .map(|(&z, &ok)| if ok { (z - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// Focal loss of one probability.
///
/// `y = true`: `-alpha (1-p)^gamma ln p`; `y = false`: `-alpha p^gamma ln(1-p)`.
pub fn focal_loss(p: f64, y: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(EPSILON, 1.0 - EPSILON);
    if y {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -alpha * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// d/dp of the `y = true` branch; zero where the clamp is active.
pub fn focal_loss_grad(p: f64, alpha: f64, gamma: f64) -> f64 {
    if !(EPSILON..=1.0 - EPSILON).contains(&p) {
        return 0.0;
    }
    let q = 1.0 - p;
    let modulating = if gamma == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln()
    };
    alpha * (modulating - q.powf(gamma) / p)
}
