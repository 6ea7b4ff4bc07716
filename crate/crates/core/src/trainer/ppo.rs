//! Clipped-surrogate policy update with the two-headed critic regression.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::buffer::RolloutBuffer;
use super::config::TrainerConfig;
use super::gae::AdvantageBatch;
use crate::error::Result;
use crate::networks::{
    adam_update, clamp_log_std, clip_grad_norm, log_prob, log_prob_grad, observation_matrix,
    ActorCritic, AdamState,
};
use crate::scalar::Real;

/// One minibatch in the form the loss consumes. `advantages` are already
/// normalised when normalisation is enabled.
#[derive(Debug, Clone)]
pub struct Minibatch<T> {
    pub observations: Array2<T>,
    pub actions: Vec<T>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub target_r: Vec<T>,
    pub target_e: Vec<T>,
}

impl<T: Real> Minibatch<T> {
    pub fn gather(
        buffer: &RolloutBuffer<T>,
        adv: &AdvantageBatch<T>,
        indices: &[usize],
        normalize: bool,
    ) -> Self {
        let obs: Vec<_> = indices.iter().map(|&i| buffer.observations[i]).collect();
        let pick = |xs: &[T]| indices.iter().map(|&i| xs[i]).collect::<Vec<T>>();
        let mut advantages = pick(&adv.adv_total);
        if normalize {
            normalize_advantages(&mut advantages);
        }
        Self {
            observations: observation_matrix(&obs),
            actions: pick(&buffer.actions),
            old_log_probs: pick(&buffer.log_probs),
            advantages,
            target_r: pick(&adv.target_r),
            target_e: pick(&adv.target_e),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            observations: self
                .observations
                .slice(ndarray::s![range.clone(), ..])
                .to_owned(),
            actions: self.actions[range.clone()].to_vec(),
            old_log_probs: self.old_log_probs[range.clone()].to_vec(),
            advantages: self.advantages[range.clone()].to_vec(),
            target_r: self.target_r[range.clone()].to_vec(),
            target_e: self.target_e[range].to_vec(),
        }
    }
}

/// Standardises to zero mean and unit (population) std with a 1e-8 guard.
/// A constant batch becomes all zeros.
pub fn normalize_advantages<T: Real>(adv: &mut [T]) {
    if adv.is_empty() {
        return;
    }
    let n = T::from_usize(adv.len()).unwrap();
    let mean = adv.iter().copied().sum::<T>() / n;
    let var = adv.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
    let denom = var.sqrt() + T::lit(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / denom);
}

/// Loss terms of one minibatch, as sums scaled by `1 / len` where noted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<T> {
    pub policy_loss: T,
    pub value_loss: T,
    pub total: T,
    /// Number of samples whose ratio left `[1 - eps, 1 + eps]`.
    pub clipped: usize,
    /// Sum of `old_log_prob - new_log_prob`.
    pub kl_sum: T,
    /// Largest `|ratio - 1|` seen.
    pub max_ratio_deviation: T,
}

impl<T: Real> LossParts<T> {
    fn merge(self, o: Self) -> Self {
        Self {
            policy_loss: self.policy_loss + o.policy_loss,
            value_loss: self.value_loss + o.value_loss,
            total: self.total + o.total,
            clipped: self.clipped + o.clipped,
            kl_sum: self.kl_sum + o.kl_sum,
            max_ratio_deviation: self.max_ratio_deviation.max(o.max_ratio_deviation),
        }
    }
}

/// Loss and gradient for `batch`, where every per-sample term is divided by
/// `denom` (the full minibatch size when `batch` is a shard of it).
fn shard_loss_and_grad<T: Real>(
    model: &ActorCritic<T>,
    batch: &Minibatch<T>,
    denom: T,
    cfg: &TrainerConfig,
    want_grad: bool,
) -> Result<(LossParts<T>, Option<ActorCritic<T>>)> {
    let n = batch.len();
    let eps = T::lit(cfg.clip_eps);
    let vf_coef = T::lit(cfg.vf_coef);
    let c2 = T::lit(cfg.c2);
    let two = T::lit(2.0);
    let lo = T::one() - eps;
    let hi = T::one() + eps;

    let (means, policy_cache) = model.policy.mlp.forward_cached(&batch.observations);
    let (values, critic_cache) = model.critic.forward_cached(&batch.observations);
    let log_std = model.policy.log_std;
    let std = clamp_log_std(log_std).exp();

    let mut parts = LossParts::<T>::default();
    let mut d_mean = Array2::zeros((n, 1));
    let mut d_log_std = T::zero();
    let mut d_values = Array2::zeros((n, 2));
    for i in 0..n {
        let mean = means[[i, 0]];
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let new_lp = log_prob(mean, std, a);
        let ratio = (new_lp - batch.old_log_probs[i]).exp();
        let surr_unclipped = ratio * adv;
        let surr_clipped = ratio.max(lo).min(hi) * adv;
        parts.policy_loss -= surr_unclipped.min(surr_clipped) / denom;
        parts.kl_sum += batch.old_log_probs[i] - new_lp;
        parts.max_ratio_deviation = parts.max_ratio_deviation.max((ratio - T::one()).abs());
        if ratio < lo || ratio > hi {
            parts.clipped += 1;
        }
        if surr_unclipped <= surr_clipped {
            // d(-ratio·adv/denom)/d(log π) = -ratio·adv/denom
            let d_lp = -ratio * adv / denom;
            let (g_mean, g_log_std) = log_prob_grad(mean, log_std, a);
            d_mean[[i, 0]] = d_lp * g_mean;
            d_log_std += d_lp * g_log_std;
        }

        let err_r = values[[i, 0]] - batch.target_r[i];
        let err_e = values[[i, 1]] - batch.target_e[i];
        parts.value_loss += (err_r * err_r + c2 * err_e * err_e) / denom;
        d_values[[i, 0]] = vf_coef * two * err_r / denom;
        d_values[[i, 1]] = vf_coef * c2 * two * err_e / denom;
    }
    parts.total = parts.policy_loss + vf_coef * parts.value_loss;

    if !want_grad {
        return Ok((parts, None));
    }
    let mut grads = ActorCritic {
        policy: crate::networks::Policy {
            mlp: model.policy.mlp.backward(&policy_cache, &d_mean)?,
            log_std: d_log_std,
        },
        critic: model.critic.backward(&critic_cache, &d_values)?,
    };
    // keep shapes identical even for an empty shard
    if n == 0 {
        grads = model.zeros_like();
    }
    Ok((parts, Some(grads)))
}

/// Total loss `policy + vf_coef · (value_r + c2 · value_e)` on one minibatch.
pub fn minibatch_loss<T: Real>(
    model: &ActorCritic<T>,
    batch: &Minibatch<T>,
    cfg: &TrainerConfig,
) -> Result<LossParts<T>> {
    let denom = T::from_usize(batch.len().max(1)).unwrap();
    Ok(shard_loss_and_grad(model, batch, denom, cfg, false)?.0)
}

/// Loss and its exact gradient; shards are evaluated in parallel and summed
/// in shard order, so the result does not depend on the thread count.
pub fn minibatch_loss_and_grad<T: Real>(
    model: &ActorCritic<T>,
    batch: &Minibatch<T>,
    cfg: &TrainerConfig,
) -> Result<(LossParts<T>, ActorCritic<T>)> {
    let n = batch.len();
    let denom = T::from_usize(n.max(1)).unwrap();
    let shard = cfg.grad_shard_size.max(1);
    let ranges: Vec<_> = (0..n)
        .step_by(shard)
        .map(|s| s..(s + shard).min(n))
        .collect();
    let results: Vec<_> = ranges
        .into_par_iter()
        .map(|r| shard_loss_and_grad(model, &batch.slice(r), denom, cfg, true))
        .collect::<Result<_>>()?;
    let mut parts = LossParts::default();
    let mut grads = model.zeros_like();
    for (p, g) in results {
        parts = parts.merge(p);
        grads.accumulate(&g.expect("gradient requested"))?;
    }
    Ok((parts, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean pre-clip gradient norm over all minibatch steps.
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// `max |ratio - 1|` on the first minibatch, before any step.
    pub initial_ratio_deviation: f64,
    pub minibatches: usize,
    /// The iteration hit a non-finite loss and was rolled back.
    pub aborted: bool,
}

/// Runs the epochs of clipped PPO on one rollout. On a non-finite loss the
/// model and optimizer are restored to their state on entry.
pub fn ppo_update<T: Real, R: Rng + ?Sized>(
    buffer: &RolloutBuffer<T>,
    advantages: &AdvantageBatch<T>,
    model: &mut ActorCritic<T>,
    adam: &mut AdamState<T>,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let saved_model = model.clone();
    let saved_adam = adam.clone();
    let lr = T::lit(cfg.lr);
    let max_norm = T::lit(cfg.max_grad_norm);
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = UpdateStats::default();
    let mut samples = 0usize;

    for _ in 0..cfg.n_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Minibatch::gather(buffer, advantages, chunk, cfg.adv_minibatch_norm);
            let (parts, mut grads) = minibatch_loss_and_grad(model, &batch, cfg)?;
            if stats.minibatches == 0 {
                stats.initial_ratio_deviation = parts.max_ratio_deviation.as_f64();
            }
            if !parts.total.is_finite() || !grads.is_finite() {
                *model = saved_model;
                *adam = saved_adam;
                stats.aborted = true;
                return Ok(stats);
            }
            let norm = clip_grad_norm(&mut grads, max_norm);
            adam_update(model, &grads, adam, lr)?;

            stats.policy_loss += parts.policy_loss.as_f64();
            stats.value_loss += parts.value_loss.as_f64();
            stats.grad_norm += norm.as_f64();
            stats.clip_fraction += parts.clipped as f64;
            stats.approx_kl += parts.kl_sum.as_f64();
            stats.minibatches += 1;
            samples += batch.len();
        }
    }
    if stats.minibatches > 0 {
        let m = stats.minibatches as f64;
        stats.policy_loss /= m;
        stats.value_loss /= m;
        stats.grad_norm /= m;
        stats.clip_fraction /= samples as f64;
        stats.approx_kl /= samples as f64;
    }
    if !model.is_finite() {
        *model = saved_model;
        *adam = saved_adam;
        stats.aborted = true;
    }
    Ok(stats)
}
