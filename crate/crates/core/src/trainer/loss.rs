use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::ProbabilityMap;
use crate::network::Real;

pub const DEFAULT_CLIP: f64 = 1e-7;

/// Pixel-weighted binary cross-entropy. Pixels whose soft target is below
/// 0.5 count as background and are weighted by `zero_class_weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BceLoss {
    pub zero_class_weight: f64,
    /// Predictions are clipped to `[clip, 1 - clip]` before the logarithm;
    /// zero disables clipping.
    pub clip: f64,
}

impl BceLoss {
    pub fn new(zero_class_weight: f64) -> Self {
        Self {
            zero_class_weight,
            clip: DEFAULT_CLIP,
        }
    }

    pub fn unclipped(zero_class_weight: f64) -> Self {
        Self {
            zero_class_weight,
            clip: 0.0,
        }
    }

    #[inline]
    pub fn pixel_weight(&self, y: f64) -> f64 {
        if y < 0.5 {
            self.zero_class_weight
        } else {
            1.0
        }
    }

    /// Mean loss over pixels. When `d_logits` is given it receives the
    /// gradient of the mean loss with respect to the pre-sigmoid outputs,
    /// `w (p - y) / n`, or zero where the clip is active.
    pub fn evaluate<T: Real>(&self, probs: &[T], target: &[T], d_logits: Option<&mut [T]>) -> f64 {
        let n = probs.len();
        debug_assert_eq!(target.len(), n);
        let (lo, hi) = (self.clip, 1.0 - self.clip);
        let inv_n = 1.0 / n as f64;
        // Neumaier-compensated sum: finite-difference checks difference two
        // nearly equal losses, so the reduction must not add its own noise.
        let (mut total, mut carry) = (0.0f64, 0.0f64);
        let mut grad = d_logits;
        for i in 0..n {
            let p = probs[i].to_f64();
            let y = target[i].to_f64();
            let w = self.pixel_weight(y);
            let pc = p.clamp(lo, hi);
            let term = -w * (y * pc.ln() + (1.0 - y) * (-pc).ln_1p());
            let t = total + term;
            carry += if total.abs() >= term.abs() {
                (total - t) + term
            } else {
                (term - t) + total
            };
            total = t;
            if let Some(g) = grad.as_deref_mut() {
                g[i] = if p < lo || p > hi {
                    T::ZERO
                } else {
                    T::from_f64(w * inv_n) * (probs[i] - target[i])
                };
            }
        }
        (total + carry) * inv_n
    }
}

pub fn weighted_bce(pred: &ProbabilityMap, target: &ProbabilityMap, w0: f64) -> Result<f64> {
    weighted_bce_with(pred, target, &BceLoss::new(w0))
}

pub fn weighted_bce_with(pred: &ProbabilityMap, target: &ProbabilityMap, loss: &BceLoss) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::dims(
            format!("{}x{}", target.width(), target.height()),
            format!("{}x{}", pred.width(), pred.height()),
        ));
    }
    Ok(loss.evaluate(pred.values(), target.values(), None))
}
