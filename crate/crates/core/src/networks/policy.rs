//! Squashed-Gaussian policy and two-headed bias-value critic.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::environment::Observation;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Actions are pulled inside `±(1 - ACTION_EPS)` before `atanh`.
pub const ACTION_EPS: f64 = 1e-7;

pub const OBS_DIM: usize = 4;

/// Policy MLP producing the pre-squash mean, plus a state-independent log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy<T> {
    pub mlp: Mlp<T>,
    pub log_std: T,
}

/// Critic outputs: reward and entropy bias values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticHeads<T> {
    pub v_r: T,
    pub v_e: T,
}

pub fn clamp_log_std<T: Real>(log_std: T) -> T {
    log_std.max(T::lit(LOG_STD_MIN)).min(T::lit(LOG_STD_MAX))
}

/// Stacks observations into a `batch × 4` matrix.
pub fn observation_matrix<T: Real>(obs: &[Observation<T>]) -> Array2<T> {
    Array2::from_shape_fn((obs.len(), OBS_DIM), |(i, j)| obs[i].to_array()[j])
}

impl<T: Real> Policy<T> {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], log_std_init: f64, rng: &mut R) -> Self {
        let widths = layer_widths(hidden, 1);
        Self {
            mlp: Mlp::orthogonal(&widths, std::f64::consts::SQRT_2, 0.01, rng),
            log_std: T::lit(log_std_init),
        }
    }

    pub fn zeros(hidden: &[usize], log_std_init: f64) -> Self {
        Self {
            mlp: Mlp::zeros(&layer_widths(hidden, 1)),
            log_std: T::lit(log_std_init),
        }
    }

    pub fn std(&self) -> T {
        clamp_log_std(self.log_std).exp()
    }

    /// Means for a batch of observation rows.
    pub fn means(&self, obs: &Array2<T>) -> Vec<T> {
        self.mlp.forward(obs).column(0).to_vec()
    }
}

/// `(mean, std)` of the pre-squash Gaussian.
pub fn policy_forward<T: Real>(policy: &Policy<T>, obs: &Observation<T>) -> (T, T) {
    let x = observation_matrix(std::slice::from_ref(obs));
    (policy.means(&x)[0], policy.std())
}

pub fn critic_new<T: Real, R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Mlp<T> {
    Mlp::orthogonal(&layer_widths(hidden, 2), std::f64::consts::SQRT_2, 1.0, rng)
}

pub fn critic_forward<T: Real>(critic: &Mlp<T>, obs: &Observation<T>) -> CriticHeads<T> {
    let out = critic.forward(&observation_matrix(std::slice::from_ref(obs)));
    CriticHeads {
        v_r: out[[0, 0]],
        v_e: out[[0, 1]],
    }
}

/// `log(1 - tanh(z)^2)` evaluated without cancellation.
pub fn log_squash_jacobian<T: Real>(z: T) -> T {
    let two = T::lit(2.0);
    let x = -two * z;
    // softplus(x) = max(x, 0) + ln(1 + e^{-|x|})
    let softplus = x.max(T::zero()) + (-x.abs()).exp().ln_1p();
    two * (T::LN_2() - z - softplus)
}

fn gaussian_log_density<T: Real>(z: T, mean: T, std: T) -> T {
    let u = (z - mean) / std;
    T::lit(-0.5) * u * u - std.ln() - T::lit(0.5) * T::TAU().ln()
}

fn pre_squash<T: Real>(action: T) -> T {
    let bound = T::one() - T::lit(ACTION_EPS);
    action.max(-bound).min(bound).atanh()
}

/// Log-density of the squashed Gaussian at `action`.
pub fn log_prob<T: Real>(mean: T, std: T, action: T) -> T {
    let z = pre_squash(action);
    gaussian_log_density(z, mean, std) - log_squash_jacobian(z)
}

/// Derivatives of [`log_prob`] with respect to the mean and the log-std.
pub fn log_prob_grad<T: Real>(mean: T, log_std: T, action: T) -> (T, T) {
    let std = clamp_log_std(log_std).exp();
    let z = pre_squash(action);
    let u = (z - mean) / std;
    let d_mean = u / std;
    let in_range = log_std >= T::lit(LOG_STD_MIN) && log_std <= T::lit(LOG_STD_MAX);
    let d_log_std = if in_range {
        u * u - T::one()
    } else {
        T::zero()
    };
    (d_mean, d_log_std)
}

/// Draws `z ~ N(mean, std)` and returns `(tanh z, log π(tanh z))`.
///
/// The action is kept inside `±(1 - ACTION_EPS)` and the log-density is
/// evaluated on that stored action, so [`log_prob`] reproduces it exactly.
pub fn sample_action<T: Real, R: Rng + ?Sized>(mean: T, std: T, rng: &mut R) -> (T, T) {
    let n: f64 = rng.sample(StandardNormal);
    let z = mean + std * T::lit(n);
    let bound = T::one() - T::lit(ACTION_EPS);
    let action = z.tanh().max(-bound).min(bound);
    (action, log_prob(mean, std, action))
}

fn layer_widths(hidden: &[usize], outputs: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(OBS_DIM);
    w.extend_from_slice(hidden);
    w.push(outputs);
    w
}

/// Every trainable parameter of the agent. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic<T> {
    pub policy: Policy<T>,
    pub critic: Mlp<T>,
}

impl<T: Real> ActorCritic<T> {
    pub fn new<R: Rng + ?Sized>(
        policy_hidden: &[usize],
        critic_hidden: &[usize],
        log_std_init: f64,
        rng: &mut R,
    ) -> Self {
        let policy = Policy::new(policy_hidden, log_std_init, rng);
        let critic = critic_new(critic_hidden, rng);
        Self { policy, critic }
    }

    /// All-zero weights, log-std 0.5.
    pub fn zeros_from(policy_hidden: &[usize], critic_hidden: &[usize]) -> Self {
        Self {
            policy: Policy::zeros(policy_hidden, 0.5),
            critic: Mlp::zeros(&layer_widths(critic_hidden, 2)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            policy: Policy {
                mlp: self.policy.mlp.zeros_like(),
                log_std: T::zero(),
            },
            critic: self.critic.zeros_like(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.policy.mlp.num_params() + 1 + self.critic.num_params()
    }

    /// Parameter slices in a fixed order: policy layers, log-std, critic layers.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.policy.mlp.params().collect();
        out.push(std::slice::from_ref(&self.policy.log_std));
        out.extend(self.critic.params());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.policy.mlp.params_mut().collect();
        out.push(std::slice::from_mut(&mut self.policy.log_std));
        out.extend(self.critic.params_mut());
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        self.slices().into_iter().flatten().copied().collect()
    }

    pub fn l2_norm(&self) -> T {
        self.slices()
            .into_iter()
            .flatten()
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self += other`, shapes must match.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().into_iter().flatten().all(|x| x.is_finite())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.policy.mlp.widths() != other.policy.mlp.widths()
            || self.critic.widths() != other.critic.widths()
        {
            return Err(Error::ShapeMismatch(format!(
                "policy {:?} / critic {:?} vs policy {:?} / critic {:?}",
                self.policy.mlp.widths(),
                self.critic.widths(),
                other.policy.mlp.widths(),
                other.critic.widths()
            )));
        }
        Ok(())
    }

    /// Validates chaining, finiteness and the expected input/output widths.
    pub fn validate(&self) -> Result<()> {
        self.policy.mlp.validate()?;
        self.critic.validate()?;
        let p = self.policy.mlp.widths();
        let c = self.critic.widths();
        if p[0] != OBS_DIM || *p.last().unwrap() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "policy widths {p:?} must map 4 -> 1"
            )));
        }
        if c[0] != OBS_DIM || *c.last().unwrap() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "critic widths {c:?} must map 4 -> 2"
            )));
        }
        if !self.policy.log_std.is_finite() {
            return Err(Error::Numerical("non-finite log-std".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_policy_outputs_bias_and_init_std() {
        let policy = Policy::<f64>::zeros(&[8, 8], 0.5);
        let (mean, std) = policy_forward(&policy, &Observation::from_array([1.0, -2.0, 0.3, 4.0]));
        assert_eq!(mean, 0.0);
        assert_relative_eq!(std, 0.5f64.exp(), epsilon = 1e-15);
        assert_relative_eq!(std, 1.6487, epsilon = 1e-4);
    }

    #[test]
    fn forward_is_pure_and_finite_at_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = Policy::<f64>::new(&[16, 16], 0.5, &mut rng);
        let obs = Observation::from_array([
            std::f64::consts::PI,
            -std::f64::consts::PI + 1e-12,
            0.0,
            0.0,
        ]);
        let a = policy_forward(&policy, &obs);
        assert_eq!(a, policy_forward(&policy, &obs));
        assert!(a.0.is_finite() && a.1.is_finite());
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = Policy::<f64>::zeros(&[4], 9.0);
        assert_relative_eq!(p.std(), 2.0f64.exp());
        p.log_std = -40.0;
        assert_relative_eq!(p.std(), (-5.0f64).exp());
    }

    #[test]
    fn standard_normal_at_origin() {
        assert_relative_eq!(
            log_prob(0.0, 1.0, 0.0),
            -0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-15
        );
        assert_relative_eq!(log_prob(0.0f64, 1.0, 0.0), -0.91894, epsilon = 1e-5);
    }

    #[test]
    fn degenerate_std_gives_tanh_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, _) = sample_action(0.4f64, 1e-8, &mut rng);
        assert_relative_eq!(a, 0.4f64.tanh(), epsilon = 1e-7);
    }

    #[test]
    fn sampled_log_prob_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..10_000 {
            let mean = (i as f64 * 0.37).sin() * 3.0;
            let std = 0.1 + (i % 17) as f64 * 0.2;
            let (a, lp) = sample_action(mean, std, &mut rng);
            assert!(a.abs() < 1.0);
            assert!((log_prob(mean, std, a) - lp).abs() <= 1e-9);
        }
    }

    #[test]
    fn jacobian_term_is_stable() {
        for z in [-30.0f64, -3.0, 0.0, 0.5, 12.0, 30.0] {
            let direct = (1.0 - z.tanh().powi(2)).ln();
            if direct.is_finite() && z.abs() < 10.0 {
                assert_relative_eq!(log_squash_jacobian(z), direct, epsilon = 1e-10);
            }
            assert!(log_squash_jacobian(z).is_finite());
        }
    }

    #[test]
    fn log_prob_mean_derivative_matches_central_difference() {
        let h = 1e-6;
        for &(mean, log_std, action) in &[
            (0.3f64, 0.1f64, 0.5f64),
            (-1.2, -0.7, -0.9),
            (0.0, 0.5, 0.99),
        ] {
            let std = log_std.exp();
            let (dm, ds) = log_prob_grad(mean, log_std, action);
            let fd_m =
                (log_prob(mean + h, std, action) - log_prob(mean - h, std, action)) / (2.0 * h);
            let fd_s = (log_prob(mean, (log_std + h).exp(), action)
                - log_prob(mean, (log_std - h).exp(), action))
                / (2.0 * h);
            assert!(
                (dm - fd_m).abs() <= 1e-5 * dm.abs().max(1e-3),
                "{dm} vs {fd_m}"
            );
            assert!(
                (ds - fd_s).abs() <= 1e-5 * ds.abs().max(1e-3),
                "{ds} vs {fd_s}"
            );
        }
    }

    #[test]
    fn zero_critic_outputs_zero() {
        let c = Mlp::<f64>::zeros(&[4, 8, 8, 2]);
        let h = critic_forward(&c, &Observation::from_array([0.1, 0.2, 0.3, 0.4]));
        assert_eq!((h.v_r, h.v_e), (0.0, 0.0));
    }

    #[test]
    fn critic_stays_finite_on_random_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c: Mlp<f64> = critic_new(&[32, 32], &mut rng);
        let obs: Vec<Observation<f64>> = (0..10_000)
            .map(|_| {
                Observation::from_array([
                    rng.random_range(-3.2..3.2),
                    rng.random_range(-3.2..3.2),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ])
            })
            .collect();
        let out = c.forward(&observation_matrix(&obs));
        assert!(out.iter().all(|x| x.is_finite()));
        let one = critic_forward(&c, &obs[17]);
        assert_eq!(one.v_r, out[[17, 0]]);
        assert_eq!(critic_forward(&c, &obs[17]), one);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn density_is_even_for_zero_mean(std in 0.05f64..5.0, a in -0.999f64..0.999) {
                let (lp, lm) = (log_prob(0.0, std, a), log_prob(0.0, std, -a));
                prop_assert!((lp - lm).abs() <= 1e-12 * lp.abs().max(1.0));
            }
        }
    }
}
