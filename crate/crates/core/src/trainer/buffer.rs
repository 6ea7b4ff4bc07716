use crate::environment::Observation;
use crate::scalar::Real;

/// Transitions of one rollout, laid out env-major: sample `(env, step)` sits
/// at index `env * n_steps + step`.
///
/// `next_v_r` / `next_v_e` hold the critic values of the state reached by each
/// step: the following step's values inside an episode segment, the value of
/// the pre-reset state on truncated steps, and the bootstrap values after the
/// last step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer<T> {
    pub n_envs: usize,
    pub n_steps: usize,
    pub observations: Vec<Observation<T>>,
    pub actions: Vec<T>,
    pub log_probs: Vec<T>,
    pub rewards: Vec<T>,
    pub v_r: Vec<T>,
    pub v_e: Vec<T>,
    pub next_v_r: Vec<T>,
    pub next_v_e: Vec<T>,
    pub truncated: Vec<bool>,
    /// Steps on which the simulator diverged and the env was reset.
    pub diverged_steps: usize,
}

impl<T: Real> RolloutBuffer<T> {
    pub fn new(n_envs: usize, n_steps: usize) -> Self {
        let n = n_envs * n_steps;
        Self {
            n_envs,
            n_steps,
            observations: vec![Observation::default(); n],
            actions: vec![T::zero(); n],
            log_probs: vec![T::zero(); n],
            rewards: vec![T::zero(); n],
            v_r: vec![T::zero(); n],
            v_e: vec![T::zero(); n],
            next_v_r: vec![T::zero(); n],
            next_v_e: vec![T::zero(); n],
            truncated: vec![false; n],
            diverged_steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, env: usize, step: usize) -> usize {
        env * self.n_steps + step
    }

    /// Per-sample entropy estimate `-log π(a|s)`.
    pub fn entropy_sample(&self, i: usize) -> T {
        -self.log_probs[i]
    }

    pub fn mean_reward(&self) -> T {
        mean(&self.rewards)
    }

    pub fn mean_entropy(&self) -> T {
        -mean(&self.log_probs)
    }
}

pub(crate) fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::from_usize(xs.len()).unwrap()
}
