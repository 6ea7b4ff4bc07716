//! Average-reward PPO with an entropy-regularised soft gain.

mod buffer;
mod config;
mod gae;
mod ppo;
mod rollout;
mod train;

pub use buffer::RolloutBuffer;
pub use config::{GainMode, TrainerConfig};
pub use gae::{compute_dual_gae, td_residuals, update_gain, AdvantageBatch, GainEstimate};
pub use ppo::{
    minibatch_loss, minibatch_loss_and_grad, normalize_advantages, ppo_update, LossParts,
    Minibatch, UpdateStats,
};
pub use rollout::collect_rollouts;
pub use train::{IterationStats, MetricsRow, TrainSummary, Trainer, METRICS_HEADER};
