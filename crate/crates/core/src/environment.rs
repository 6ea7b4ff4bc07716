//! The swing-up task as a continuing MDP: observation, quadratic reward,
//! Gaussian resets, Bernoulli truncation, goal region and disturbances.
//!
//! Random number consumption per [`Env::step`] in training mode is fixed:
//! one uniform draw for the truncation test, then, only if the step was
//! truncated, four standard-normal draws for the reset (q1, q2, qd1, qd2).

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    angle_difference, apply_actuation, end_effector_height, step, wrap_angle, PlantParams,
    PlantState, RobotVariant,
};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real"))]
pub struct EnvConfig<T> {
    pub alpha: T,
    pub q_diag: [T; 4],
    pub goal: [T; 4],
    /// Standard deviation of the reset Gaussian for (q1, q2, qd1, qd2).
    /// Default 2.0, i.e. variance 4.0.
    pub reset_std: [T; 4],
    pub p_trunc: T,
    /// rad/s mapped to 1.0 in the observation.
    pub vel_norm: T,
    pub mode: EpisodeMode,
    /// Goal region: end-effector height >= this fraction of the total arm length.
    pub goal_height_fraction: T,
}

impl<T: Real> Default for EnvConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.001),
            q_diag: [100.0, 100.0, 4.0, 2.0].map(T::lit),
            goal: [T::PI(), T::zero(), T::zero(), T::zero()],
            reset_std: [T::lit(2.0); 4],
            p_trunc: T::lit(0.005),
            vel_norm: T::lit(20.0),
            mode: EpisodeMode::Train,
            goal_height_fraction: T::lit(0.75),
        }
    }
}

impl<T: Real> EnvConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > T::zero()) {
            return Err(Error::param("alpha", "must be > 0"));
        }
        if self
            .q_diag
            .iter()
            .any(|q| !(q.is_finite() && *q >= T::zero()))
        {
            return Err(Error::param("q_diag", "entries must be finite and >= 0"));
        }
        if self.goal.iter().any(|g| !g.is_finite()) {
            return Err(Error::param("goal", "entries must be finite"));
        }
        if self
            .reset_std
            .iter()
            .any(|s| !(s.is_finite() && *s >= T::zero()))
        {
            return Err(Error::param("reset_std", "entries must be finite and >= 0"));
        }
        if !(self.p_trunc >= T::zero() && self.p_trunc < T::one()) {
            return Err(Error::param("p_trunc", "must lie in [0, 1)"));
        }
        if !(self.vel_norm.is_finite() && self.vel_norm > T::zero()) {
            return Err(Error::param("vel_norm", "must be > 0"));
        }
        if !self.goal_height_fraction.is_finite() {
            return Err(Error::param("goal_height_fraction", "must be finite"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> EnvConfig<U> {
        let c = |x: T| U::lit(x.as_f64());
        EnvConfig {
            alpha: c(self.alpha),
            q_diag: self.q_diag.map(c),
            goal: self.goal.map(c),
            reset_std: self.reset_std.map(c),
            p_trunc: c(self.p_trunc),
            vel_norm: c(self.vel_norm),
            mode: self.mode,
            goal_height_fraction: c(self.goal_height_fraction),
        }
    }

    pub fn with_mode(mut self, mode: EpisodeMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Network input: wrapped angles and normalised velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation<T> {
    pub q1_wrapped: T,
    pub q2_wrapped: T,
    pub qd1_norm: T,
    pub qd2_norm: T,
}

impl<T: Real> Observation<T> {
    pub fn from_array(a: [T; 4]) -> Self {
        Self {
            q1_wrapped: a[0],
            q2_wrapped: a[1],
            qd1_norm: a[2],
            qd2_norm: a[3],
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [
            self.q1_wrapped,
            self.q2_wrapped,
            self.qd1_norm,
            self.qd2_norm,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    pub next_observation: Observation<T>,
    pub reward: T,
    pub truncated: bool,
    /// Raw post-step plant state.
    pub state: PlantState<T>,
    pub in_goal: bool,
}

pub fn observe<T: Real>(state: &PlantState<T>, cfg: &EnvConfig<T>) -> Observation<T> {
    Observation {
        q1_wrapped: wrap_angle(state.q1),
        q2_wrapped: wrap_angle(state.q2),
        qd1_norm: state.qd1 / cfg.vel_norm,
        qd2_norm: state.qd2 / cfg.vel_norm,
    }
}

/// `-alpha · Σ q_i d_i²` with wrapped differences on the angle components.
/// The action does not enter the cost.
pub fn reward<T: Real>(obs: &Observation<T>, _action: T, cfg: &EnvConfig<T>) -> T {
    let o = obs.to_array();
    let d = [
        angle_difference(o[0], cfg.goal[0]),
        angle_difference(o[1], cfg.goal[1]),
        o[2] - cfg.goal[2],
        o[3] - cfg.goal[3],
    ];
    let cost: T = (0..4).map(|i| cfg.q_diag[i] * d[i] * d[i]).sum();
    T::zero() - cfg.alpha * cost
}

/// Samples a start state around the hanging rest state. Angles stay unwrapped.
pub fn reset<T: Real, R: Rng + ?Sized>(cfg: &EnvConfig<T>, rng: &mut R) -> PlantState<T> {
    let mut s = [T::zero(); 4];
    for (i, x) in s.iter_mut().enumerate() {
        let n: f64 = rng.sample(StandardNormal);
        *x = cfg.reset_std[i] * T::lit(n);
    }
    PlantState::from_array(s)
}

/// Bernoulli(p_trunc) draw. Always consumes one uniform sample.
pub fn should_truncate<T: Real, R: Rng + ?Sized>(cfg: &EnvConfig<T>, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < cfg.p_trunc.as_f64()
}

pub fn goal_height_threshold<T: Real>(cfg: &EnvConfig<T>, params: &PlantParams<T>) -> T {
    cfg.goal_height_fraction * (params.length_1 + params.length_2)
}

/// Closed region: the boundary height counts as in goal.
pub fn in_goal_region<T: Real>(
    state: &PlantState<T>,
    cfg: &EnvConfig<T>,
    params: &PlantParams<T>,
) -> bool {
    end_effector_height(state, params) >= goal_height_threshold(cfg, params)
}

/// One MDP transition. The disturbance is added after actuator clipping
/// and is therefore not bounded by the torque limit. The reward is computed
/// on the post-step observation. In `Eval` mode the rng is not touched.
#[allow(clippy::too_many_arguments)]
pub fn env_step<T: Real, R: Rng + ?Sized>(
    state: &PlantState<T>,
    action: T,
    cfg: &EnvConfig<T>,
    variant: RobotVariant,
    params: &PlantParams<T>,
    rng: &mut R,
    disturbance: Option<[T; 2]>,
) -> Result<StepOutcome<T>> {
    let mut torques = apply_actuation(variant, action, params)?;
    if let Some(d) = disturbance {
        torques[0] += d[0];
        torques[1] += d[1];
    }
    let next = step(state, torques, params)?;
    let obs = observe(&next, cfg);
    let r = reward(&obs, action, cfg);
    let truncated = match cfg.mode {
        EpisodeMode::Train => should_truncate(cfg, rng),
        EpisodeMode::Eval => false,
    };
    Ok(StepOutcome {
        next_observation: obs,
        reward: r,
        truncated,
        state: next,
        in_goal: in_goal_region(&next, cfg, params),
    })
}

/// A self-contained environment instance owning its state and rng stream.
#[derive(Debug, Clone)]
pub struct Env<T> {
    pub cfg: EnvConfig<T>,
    pub params: PlantParams<T>,
    pub variant: RobotVariant,
    pub state: PlantState<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Env<T> {
    /// Creates the environment and draws its first start state.
    pub fn new(
        cfg: EnvConfig<T>,
        params: PlantParams<T>,
        variant: RobotVariant,
        rng: ChaCha8Rng,
    ) -> Self {
        let mut env = Self {
            cfg,
            params,
            variant,
            state: PlantState::zero(),
            rng,
        };
        env.reset();
        env
    }

    pub fn reset(&mut self) -> Observation<T> {
        self.state = reset(&self.cfg, &mut self.rng);
        self.observation()
    }

    pub fn observation(&self) -> Observation<T> {
        observe(&self.state, &self.cfg)
    }

    /// The env's private stream; the trainer draws this env's actions from it.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Steps the plant. A truncated step leaves the pre-reset state in
    /// `outcome.state`; the caller decides when to call [`Env::reset`].
    pub fn step(&mut self, action: T, disturbance: Option<[T; 2]>) -> Result<StepOutcome<T>> {
        let outcome = env_step(
            &self.state,
            action,
            &self.cfg,
            self.variant,
            &self.params,
            &mut self.rng,
            disturbance,
        )?;
        self.state = outcome.state;
        Ok(outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent<T> {
    pub start_time: T,
    pub duration: T,
    pub torque: [T; 2],
}

impl<T: Real> DisturbanceEvent<T> {
    pub fn active_at(&self, t: T) -> bool {
        t >= self.start_time && t < self.start_time + self.duration
    }
}

/// Ranges of the random pulse generator, as `(low, high)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    pub enabled: bool,
    /// Magnitude of each joint's pulse torque, N·m; the sign is random.
    pub magnitude_range: (f64, f64),
    /// Quiet time before each pulse, s.
    pub interval_range: (f64, f64),
    pub pulse_duration_range: (f64, f64),
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            magnitude_range: (0.25, 1.0),
            interval_range: (2.0, 6.0),
            pulse_duration_range: (0.05, 0.2),
        }
    }
}

impl DisturbanceConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("magnitude_range", self.magnitude_range, true),
            ("interval_range", self.interval_range, false),
            ("pulse_duration_range", self.pulse_duration_range, false),
        ];
        for (key, (lo, hi), zero_ok) in ranges {
            let lo_ok = if zero_ok { lo >= 0.0 } else { lo > 0.0 };
            if !(lo.is_finite() && hi.is_finite() && lo_ok && lo <= hi) {
                return Err(Error::param(
                    key,
                    format!("need 0 < low <= high, got ({lo}, {hi})"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSchedule<T> {
    pub seed: u64,
    pub events: Vec<DisturbanceEvent<T>>,
}

impl<T: Real> DisturbanceSchedule<T> {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            events: Vec::new(),
        }
    }

    /// Summed torque of events active at time `t`, if any.
    pub fn torque_at(&self, t: T) -> Option<[T; 2]> {
        let mut active = self.events.iter().filter(|e| e.active_at(t)).peekable();
        active.peek()?;
        Some(active.fold([T::zero(); 2], |acc, e| {
            [acc[0] + e.torque[0], acc[1] + e.torque[1]]
        }))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(["start_time", "duration", "tau1", "tau2"])
            .map_err(io)?;
        for e in &self.events {
            w.write_record([
                e.start_time.to_string(),
                e.duration.to_string(),
                e.torque[0].to_string(),
                e.torque[1].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Generates pulses left to right: quiet gap, then a pulse, until the next
/// pulse would end past `duration`. Events are sorted and disjoint.
pub fn make_disturbance_schedule<T: Real>(
    duration: T,
    seed: u64,
    cfg: &DisturbanceConfig,
) -> DisturbanceSchedule<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let horizon = duration.as_f64();
    let mut t = 0.0;
    loop {
        let start = t + uniform(&mut rng, cfg.interval_range);
        let len = uniform(&mut rng, cfg.pulse_duration_range);
        let mut torque = [T::zero(); 2];
        for tq in torque.iter_mut() {
            let magnitude = uniform(&mut rng, cfg.magnitude_range);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *tq = T::lit(sign * magnitude);
        }
        if start + len > horizon {
            break;
        }
        events.push(DisturbanceEvent {
            start_time: T::lit(start),
            duration: T::lit(len),
            torque,
        });
        t = start + len;
    }
    DisturbanceSchedule { seed, events }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn observe_examples() {
        let cfg = EnvConfig::<f64>::default();
        let v = cfg.vel_norm;
        assert_eq!(observe(&PlantState::zero(), &cfg).to_array(), [0.0; 4]);

        let o = observe(&PlantState::new(3.0 * PI, 0.0, v, 0.0), &cfg).to_array();
        assert_relative_eq!(o[0], PI, epsilon = 1e-12);
        assert_eq!(&o[1..], &[0.0, 1.0, 0.0]);

        let o = observe(&PlantState::new(-2.5 * PI, 0.5 * PI, 0.0, -2.0 * v), &cfg).to_array();
        assert_relative_eq!(o[0], -0.5 * PI, epsilon = 1e-12);
        assert_relative_eq!(o[1], 0.5 * PI, epsilon = 1e-12);
        assert_eq!(o[2], 0.0);
        assert_eq!(o[3], -2.0);
    }

    #[test]
    fn reward_examples() {
        let cfg = EnvConfig::<f64>::default();
        let goal = Observation::from_array(cfg.goal);
        assert_eq!(reward(&goal, 0.7, &cfg), 0.0);
        let bottom = Observation::from_array([0.0; 4]);
        assert_relative_eq!(reward(&bottom, 0.0, &cfg), -0.1 * PI * PI, epsilon = 1e-12);
        assert_relative_eq!(reward(&bottom, 0.0, &cfg), -0.98696, epsilon = 1e-5);
        let spinning = Observation::from_array([PI, 0.0, 1.0, 0.0]);
        assert_relative_eq!(reward(&spinning, 0.0, &cfg), -0.004, epsilon = 1e-15);
    }

    #[test]
    fn reset_with_zero_std_is_bottom() {
        let cfg = EnvConfig::<f64> {
            reset_std: [0.0; 4],
            ..EnvConfig::default()
        };
        assert_eq!(reset(&cfg, &mut rng(1)), PlantState::zero());
    }

    #[test]
    fn reset_moments() {
        let cfg = EnvConfig::<f64>::default();
        let mut r = rng(7);
        let n = 100_000;
        let draws: Vec<[f64; 4]> = (0..n).map(|_| reset(&cfg, &mut r).to_array()).collect();
        for i in 0..4 {
            let mean = draws.iter().map(|d| d[i]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let std = cfg.reset_std[i];
            let stderr = std / (n as f64).sqrt();
            assert!(mean.abs() < 3.0 * stderr, "dim {i}: mean {mean}");
            assert!((var / (std * std) - 1.0).abs() < 0.05, "dim {i}: var {var}");
        }
    }

    #[test]
    fn truncation_extremes() {
        let mut cfg = EnvConfig::<f64>::default();
        let mut r = rng(3);
        cfg.p_trunc = 0.0;
        assert!((0..1000).all(|_| !should_truncate(&cfg, &mut r)));
        cfg.p_trunc = 1.0;
        assert!((0..1000).all(|_| should_truncate(&cfg, &mut r)));
    }

    #[test]
    fn goal_region_predicate() {
        let cfg = EnvConfig::<f64>::default();
        let p = PlantParams::<f64>::default();
        assert!(in_goal_region(&PlantState::upright(), &cfg, &p));
        assert!(!in_goal_region(&PlantState::zero(), &cfg, &p));

        // fully upright sits exactly on the threshold when the fraction is 1
        let mut cfg = cfg;
        cfg.goal_height_fraction = 1.0;
        let s = PlantState::upright();
        assert_eq!(end_effector_height(&s, &p), goal_height_threshold(&cfg, &p));
        assert!(in_goal_region(&s, &cfg, &p));
        let below = PlantState::new(PI, 1e-6, 0.0, 0.0);
        assert!(!in_goal_region(&below, &cfg, &p));
    }

    #[test]
    fn env_step_from_rest_without_friction() {
        let cfg = EnvConfig::<f64>::default();
        let p = PlantParams::<f64>::default().without_friction();
        let out = env_step(
            &PlantState::zero(),
            0.0,
            &cfg,
            RobotVariant::Pendubot,
            &p,
            &mut rng(0),
            None,
        )
        .unwrap();
        assert_eq!(out.state, PlantState::zero());
        assert_relative_eq!(out.reward, -0.98696, epsilon = 1e-5);
    }

    #[test]
    fn eval_mode_never_truncates() {
        let mut cfg = EnvConfig::<f64>::default().with_mode(EpisodeMode::Eval);
        cfg.p_trunc = 0.999;
        let p = PlantParams::<f64>::default();
        let mut s = PlantState::zero();
        let mut r = rng(11);
        for _ in 0..500 {
            let out = env_step(&s, 0.3, &cfg, RobotVariant::Acrobot, &p, &mut r, None).unwrap();
            assert!(!out.truncated);
            s = out.state;
        }
    }

    #[test]
    fn env_sequences_repeat_with_seed() {
        let run = || {
            let mut env = Env::new(
                EnvConfig::<f64>::default(),
                PlantParams::default(),
                RobotVariant::Acrobot,
                rng(42),
            );
            let mut out = Vec::new();
            for k in 0..300 {
                let o = env.step((k as f64 * 0.1).sin(), None).unwrap();
                if o.truncated {
                    env.reset();
                }
                out.push((o.reward.to_bits(), o.truncated, o.state.q1.to_bits()));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn disturbance_is_not_torque_limited() {
        let cfg = EnvConfig::<f64>::default();
        let p = PlantParams::<f64>::default().without_friction();
        let mut r = rng(0);
        let with = env_step(
            &PlantState::zero(),
            1.0,
            &cfg,
            RobotVariant::Pendubot,
            &p,
            &mut r,
            Some([10.0, 0.0]),
        )
        .unwrap();
        let mut big = p;
        big.torque_limit = 16.0;
        let direct = step(&PlantState::zero(), [16.0, 0.0], &big).unwrap();
        assert_relative_eq!(with.state.q1, direct.q1, epsilon = 1e-15);
    }

    #[test]
    fn disturbance_schedule_properties() {
        let cfg = DisturbanceConfig::default();
        let a = make_disturbance_schedule::<f64>(60.0, 9, &cfg);
        let b = make_disturbance_schedule::<f64>(60.0, 9, &cfg);
        assert_eq!(a, b);
        assert!(!a.events.is_empty());
        for w in a.events.windows(2) {
            assert!(w[0].start_time + w[0].duration <= w[1].start_time);
        }
        for e in &a.events {
            assert!(e.start_time >= 0.0 && e.start_time + e.duration <= 60.0);
        }

        let silent = DisturbanceConfig {
            magnitude_range: (0.0, 0.0),
            ..cfg
        };
        let s = make_disturbance_schedule::<f64>(60.0, 9, &silent);
        assert!(s.events.iter().all(|e| e.torque == [0.0, 0.0]));
    }

    #[test]
    fn schedule_csv_has_one_row_per_event() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.csv");
        let s = make_disturbance_schedule::<f64>(30.0, 1, &DisturbanceConfig::default());
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("start_time,duration,tau1,tau2"));
        assert_eq!(lines.count(), s.events.len());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reward_is_nonpositive_and_2pi_invariant(
                q1 in -20.0f64..20.0, q2 in -20.0f64..20.0,
                qd1 in -50.0f64..50.0, qd2 in -50.0f64..50.0, k in -3i32..3,
            ) {
                let cfg = EnvConfig::<f64>::default();
                let s = PlantState::new(q1, q2, qd1, qd2);
                let r = reward(&observe(&s, &cfg), 0.0, &cfg);
                prop_assert!(r <= 0.0);
                let shift = 2.0 * PI * k as f64;
                let shifted = PlantState::new(q1 + shift, q2 - shift, qd1, qd2);
                let r2 = reward(&observe(&shifted, &cfg), 0.0, &cfg);
                prop_assert!((r - r2).abs() < 1e-9);
            }

            #[test]
            fn schedules_are_sorted_and_disjoint(seed in any::<u64>(), duration in 1.0f64..120.0) {
                let s = make_disturbance_schedule::<f64>(duration, seed, &DisturbanceConfig::default());
                for w in s.events.windows(2) {
                    prop_assert!(w[0].start_time + w[0].duration <= w[1].start_time);
                }
                for e in &s.events {
                    prop_assert!(e.start_time + e.duration <= duration);
                }
            }
        }
    }
}
