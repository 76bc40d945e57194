use crate::error::{Error, Result};
use crate::network::{ModelWeights, Real};

/// Moment accumulators aligned with the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ModelWeights<T>,
    pub v: ModelWeights<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(weights: &ModelWeights<T>) -> Self {
        Self {
            m: weights.zeros_like(),
            v: weights.zeros_like(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// One bias-corrected Adam update:
/// `w -= lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Nothing is modified when any gradient is non-finite; the error names the
/// offending tensor.
pub fn adam_step<T: Real>(
    weights: &mut ModelWeights<T>,
    grads: &ModelWeights<T>,
    state: &mut AdamState<T>,
    params: &AdamParams,
) -> Result<()> {
    if !weights.same_structure(grads) || !weights.same_structure(&state.m) || !weights.same_structure(&state.v) {
        return Err(Error::InvalidInput("optimizer structures are not aligned".into()));
    }
    if let Some(path) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of `{path}`")));
    }
    let t = state.step + 1;
    let (b1, b2) = (params.beta1, params.beta2);
    let c1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);
    let tensors = weights
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut().iter_mut()));
    for ((w, g), (m, v)) in tensors {
        for (((wi, gi), mi), vi) in w
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(m.data.iter_mut())
            .zip(v.data.iter_mut())
        {
            let g = gi.to_f64();
            let m_new = b1 * mi.to_f64() + (1.0 - b1) * g;
            let v_new = b2 * vi.to_f64() + (1.0 - b2) * g * g;
            *mi = T::from_f64(m_new);
            *vi = T::from_f64(v_new);
            let update = params.learning_rate * (m_new / c1) / ((v_new / c2).sqrt() + params.epsilon);
            *wi = T::from_f64(wi.to_f64() - update);
        }
    }
    state.step = t;
    Ok(())
}
