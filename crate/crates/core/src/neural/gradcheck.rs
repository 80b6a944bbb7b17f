//! Central-difference check of the analytic gradient.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{EncoderParams, TENSOR_NAMES};
use super::train::{sample_gradient, sample_loss, EncodedSample};
use super::ClassifierConfig;
use crate::error::Result;

/// Denominator floor of the relative error, for coordinates where both
/// gradients vanish.
pub const RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor, coordinates checked, worst relative error)`.
    pub per_tensor: Vec<(&'static str, usize, f64)>,
}

impl GradCheckReport {
    pub fn coordinates(&self) -> usize {
        self.per_tensor.iter().map(|t| t.1).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic gradient of the single-sample loss with
/// `(L(θ+ε) - L(θ-ε)) / 2ε` on `per_tensor` random coordinates of every
/// tensor. Embedding coordinates are drawn from the rows the sample uses.
pub fn gradient_check(
    params: &EncoderParams,
    sample: &EncodedSample,
    config: &ClassifierConfig,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut grads = params.zeros_like();
    sample_gradient(params, sample, config, 1.0, &mut grads)?;
    let analytic = grads.tensors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = params.model_dim();
    let mut used_rows: Vec<usize> = sample.ids.iter().map(|&i| i as usize).collect();
    used_rows.sort_unstable();
    used_rows.dedup();

    let mut probe = params.clone();
    let mut per = Vec::with_capacity(TENSOR_NAMES.len());
    let mut worst = 0.0f64;
    for (t, (name, _, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = (0..per_tensor)
            .map(|_| {
                if t == 0 {
                    let row = *used_rows.choose(&mut rng).expect("non-empty window");
                    row * d + rng.gen_range(0..d)
                } else {
                    rng.gen_range(0..n)
                }
            })
            .collect();
        let mut tensor_worst = 0.0f64;
        for &c in &coords {
            let orig = probe.tensors_mut()[t][c];
            probe.tensors_mut()[t][c] = orig + eps;
            let up = sample_loss(&probe, sample, config)?;
            probe.tensors_mut()[t][c] = orig - eps;
            let down = sample_loss(&probe, sample, config)?;
            probe.tensors_mut()[t][c] = orig;
            let numeric = (up - down) / (2.0 * eps);
            tensor_worst = tensor_worst.max(relative_error(grad[c], numeric));
        }
        worst = worst.max(tensor_worst);
        per.push((*name, coords.len(), tensor_worst));
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        per_tensor: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(seed: u64) -> (ClassifierConfig, EncoderParams, EncodedSample) {
        let cfg = ClassifierConfig {
            window: 10,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            labels: 4,
            ..Default::default()
        };
        let params = EncoderParams::init(&cfg, 12, seed);
        let sample = EncodedSample {
            ids: vec![1, 1, 4, 5, 9, 10, 3, 7, 1, 1],
            padding: vec![
                true, true, false, false, false, false, false, false, true, true,
            ],
            nsw_mask: vec![
                false, false, false, false, true, true, true, false, false, false,
            ],
            legal: vec![true, false, true, true],
            target: 2,
        };
        (cfg, params, sample)
    }

    #[test]
    fn analytic_gradient_agrees() {
        let (cfg, params, sample) = setup(1);
        let report = gradient_check(&params, &sample, &cfg, 1e-4, 8, 2).unwrap();
        assert_eq!(report.coordinates(), 128);
        assert!(report.max_relative_error <= 1e-3, "{report:?}");
        let ce = cfg.clone().with_cross_entropy();
        let report = gradient_check(&params, &sample, &ce, 1e-4, 8, 3).unwrap();
        assert!(report.max_relative_error <= 1e-3, "{report:?}");
    }

    #[test]
    fn zero_classifier_gives_symmetric_label_gradients() {
        let (cfg, mut params, mut sample) = setup(2);
        params.classifier.fill(0.0);
        params.classifier_bias.fill(0.0);
        sample.legal = vec![true; 4];
        let mut grads = params.zeros_like();
        sample_gradient(&params, &sample, &cfg, 1.0, &mut grads).unwrap();
        let others: Vec<usize> = (0..4).filter(|&j| j != sample.target).collect();
        for &j in &others[1..] {
            for i in 0..cfg.model_dim {
                assert!(
                    (grads.classifier[[i, j]] - grads.classifier[[i, others[0]]]).abs() < 1e-15
                );
            }
            assert!((grads.classifier_bias[j] - grads.classifier_bias[others[0]]).abs() < 1e-15);
        }
    }

    #[test]
    fn first_order_taylor() {
        let (cfg, params, sample) = setup(3);
        let mut grads = params.zeros_like();
        sample_gradient(&params, &sample, &cfg, 1.0, &mut grads).unwrap();
        let base = sample_loss(&params, &sample, &cfg).unwrap();
        let delta = 1e-6;
        let mut moved = params.clone();
        moved.ff_in[[3, 5]] += delta;
        let changed = sample_loss(&moved, &sample, &cfg).unwrap();
        let predicted = grads.ff_in[[3, 5]] * delta;
        assert!(((changed - base) - predicted).abs() <= 1e-3 * predicted.abs().max(1e-12));
    }
}
