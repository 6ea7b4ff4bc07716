use serde::{Deserialize, Serialize};

use super::policy::ActorCritic;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Adam moments over the flattened [`ActorCritic`] parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            step: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn for_model(model: &ActorCritic<T>) -> Self {
        Self::new(model.num_params())
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update<T: Real>(
    params: &mut ActorCritic<T>,
    grads: &ActorCritic<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    params.check_same_shape(grads)?;
    if state.m.len() != params.num_params() || state.v.len() != params.num_params() {
        return Err(Error::ShapeMismatch(format!(
            "adam state holds {} moments for {} parameters",
            state.m.len(),
            params.num_params()
        )));
    }
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let correction1 = T::one() - state.beta1.powi(t);
    let correction2 = T::one() - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let mut k = 0;
    for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
        for (x, &dx) in p.iter_mut().zip(g) {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = b1 * *m + (T::one() - b1) * dx;
            *v = b2 * *v + (T::one() - b2) * dx * dx;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
            k += 1;
        }
    }
    Ok(())
}

/// Scales all gradients so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut ActorCritic<T>, max_norm: T) -> T {
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
