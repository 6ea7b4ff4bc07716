use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the average-reward baseline is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Separate running gains for the reward and the entropy stream.
    PerStream,
    /// One gain for `r + tau·(-log π)`, stored in `rho_r`; `rho_e` stays 0.
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Entropy temperature.
    pub tau: f64,
    pub lambda_r: f64,
    pub lambda_e: f64,
    pub clip_eps: f64,
    /// Step size of the gain tracker.
    pub gain_lr: f64,
    pub lr: f64,
    /// Truncation probability of the training environments; takes precedence
    /// over `env.p_trunc` during training.
    pub p_trunc: f64,
    /// Weight of the entropy-value regression inside the critic loss.
    pub c2: f64,
    pub vf_coef: f64,
    pub n_envs: usize,
    pub n_rollout_steps: usize,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub adv_minibatch_norm: bool,
    pub total_frames: u64,
    /// Frames between evaluations/checkpoints; 0 evaluates only at the end.
    pub eval_period: u64,
    pub log_std_init: f64,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gain_mode: GainMode,
    /// Samples per gradient shard; shards are summed in index order.
    pub grad_shard_size: usize,
    /// Consecutive aborted iterations tolerated before training stops.
    pub max_failed_iterations: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            tau: 1.5,
            lambda_r: 0.8,
            lambda_e: 0.6,
            clip_eps: 0.05,
            gain_lr: 0.01,
            lr: 5e-4,
            p_trunc: 5e-3,
            c2: 0.5,
            vf_coef: 0.25,
            n_envs: 64,
            n_rollout_steps: 128,
            n_epochs: 6,
            batch_size: 1024,
            max_grad_norm: 10.0,
            adv_minibatch_norm: true,
            total_frames: 30_000_000,
            eval_period: 1_000_000,
            log_std_init: 0.5,
            policy_hidden: vec![256, 256],
            critic_hidden: vec![512, 512],
            gain_mode: GainMode::PerStream,
            grad_shard_size: 256,
            max_failed_iterations: 3,
        }
    }
}

impl TrainerConfig {
    pub fn frames_per_iteration(&self) -> u64 {
        (self.n_envs * self.n_rollout_steps) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [("lambda_r", self.lambda_r), ("lambda_e", self.lambda_e)];
        for (key, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(key, format!("must lie in [0, 1], got {v}")));
            }
        }
        let positive = [
            ("clip_eps", self.clip_eps),
            ("lr", self.lr),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(key, format!("must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("tau", self.tau),
            ("gain_lr", self.gain_lr),
            ("c2", self.c2),
            ("vf_coef", self.vf_coef),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(key, format!("must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.p_trunc) {
            return Err(Error::param("p_trunc", "must lie in [0, 1)"));
        }
        let counts = [
            ("n_envs", self.n_envs),
            ("n_rollout_steps", self.n_rollout_steps),
            ("n_epochs", self.n_epochs),
            ("batch_size", self.batch_size),
            ("grad_shard_size", self.grad_shard_size),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::param(key, "must be >= 1"));
            }
        }
        if self.policy_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::param(
                "policy_hidden/critic_hidden",
                "layer widths must be >= 1",
            ));
        }
        if !self.log_std_init.is_finite() {
            return Err(Error::param("log_std_init", "must be finite"));
        }
        Ok(())
    }
}
