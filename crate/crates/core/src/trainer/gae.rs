//! Average-reward advantage estimation with separate reward and entropy streams.
//!
//! The recursions below are reconstructed from the method description: both
//! streams use undiscounted TD residuals against their own gain, each with its
//! own λ, and the policy sees `adv_r + tau · adv_e`.

use serde::{Deserialize, Serialize};

use super::buffer::{mean, RolloutBuffer};
use super::config::{GainMode, TrainerConfig};
use crate::scalar::Real;

/// Running estimates of the average reward and average entropy per step.
/// The entropy-regularised gain is `rho_r + tau · rho_e`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GainEstimate<T> {
    pub rho_r: T,
    pub rho_e: T,
}

impl<T: Real> GainEstimate<T> {
    pub fn soft_gain(&self, tau: T) -> T {
        self.rho_r + tau * self.rho_e
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch<T> {
    pub delta_r: Vec<T>,
    pub delta_e: Vec<T>,
    pub adv_r: Vec<T>,
    pub adv_e: Vec<T>,
    pub adv_total: Vec<T>,
    pub target_r: Vec<T>,
    pub target_e: Vec<T>,
}

/// TD residuals of both streams, in buffer order.
pub fn td_residuals<T: Real>(
    buffer: &RolloutBuffer<T>,
    gain: &GainEstimate<T>,
) -> (Vec<T>, Vec<T>) {
    let n = buffer.len();
    let mut delta_r = Vec::with_capacity(n);
    let mut delta_e = Vec::with_capacity(n);
    for i in 0..n {
        delta_r.push(buffer.rewards[i] - gain.rho_r + buffer.next_v_r[i] - buffer.v_r[i]);
        delta_e.push(buffer.entropy_sample(i) - gain.rho_e + buffer.next_v_e[i] - buffer.v_e[i]);
    }
    (delta_r, delta_e)
}

/// Backward λ-recursion over one env's steps, restarting after truncations.
fn lambda_returns<T: Real>(deltas: &[T], truncated: &[bool], lambda: T) -> Vec<T> {
    let mut out = vec![T::zero(); deltas.len()];
    let mut carry = T::zero();
    for t in (0..deltas.len()).rev() {
        if truncated[t] {
            carry = T::zero();
        }
        carry = deltas[t] + lambda * carry;
        out[t] = carry;
    }
    out
}

pub fn compute_dual_gae<T: Real>(
    buffer: &RolloutBuffer<T>,
    gain: &GainEstimate<T>,
    cfg: &TrainerConfig,
) -> AdvantageBatch<T> {
    let (delta_r, delta_e) = td_residuals(buffer, gain);
    let lambda_r = T::lit(cfg.lambda_r);
    let lambda_e = T::lit(cfg.lambda_e);
    let tau = T::lit(cfg.tau);
    let n = buffer.len();
    let mut adv_r = Vec::with_capacity(n);
    let mut adv_e = Vec::with_capacity(n);
    for env in 0..buffer.n_envs {
        let span = env * buffer.n_steps..(env + 1) * buffer.n_steps;
        let trunc = &buffer.truncated[span.clone()];
        adv_r.extend(lambda_returns(&delta_r[span.clone()], trunc, lambda_r));
        adv_e.extend(lambda_returns(&delta_e[span], trunc, lambda_e));
    }
    let adv_total = adv_r
        .iter()
        .zip(&adv_e)
        .map(|(&r, &e)| r + tau * e)
        .collect();
    let target_r = adv_r
        .iter()
        .zip(&buffer.v_r)
        .map(|(&a, &v)| a + v)
        .collect();
    let target_e = adv_e
        .iter()
        .zip(&buffer.v_e)
        .map(|(&a, &v)| a + v)
        .collect();
    AdvantageBatch {
        delta_r,
        delta_e,
        adv_r,
        adv_e,
        adv_total,
        target_r,
        target_e,
    }
}

/// Moves each gain by `gain_lr` times the batch-mean TD residual of its stream.
pub fn update_gain<T: Real>(
    gain: &GainEstimate<T>,
    advantages: &AdvantageBatch<T>,
    cfg: &TrainerConfig,
) -> GainEstimate<T> {
    let eta = T::lit(cfg.gain_lr);
    let mean_r = mean(&advantages.delta_r);
    let mean_e = mean(&advantages.delta_e);
    match cfg.gain_mode {
        GainMode::PerStream => GainEstimate {
            rho_r: gain.rho_r + eta * mean_r,
            rho_e: gain.rho_e + eta * mean_e,
        },
        GainMode::Combined => GainEstimate {
            rho_r: gain.rho_r + eta * (mean_r + T::lit(cfg.tau) * mean_e),
            rho_e: T::zero(),
        },
    }
}
