//! Function approximators with hand-written reverse-mode gradients.

mod adam;
mod mlp;
mod policy;

pub use adam::{adam_update, clip_grad_norm, AdamState};
pub use mlp::{ForwardCache, Linear, Mlp};
pub use policy::{
    clamp_log_std, critic_forward, critic_new, log_prob, log_prob_grad, log_squash_jacobian,
    observation_matrix, policy_forward, sample_action, ActorCritic, CriticHeads, Policy,
    ACTION_EPS, LOG_STD_MAX, LOG_STD_MIN, OBS_DIM,
};
