//! Disturbed 60-second trials, the time-in-goal score and multi-seed reports.

mod plot;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_actuation, step, PlantParams, PlantState, RobotVariant};
use crate::environment::{
    in_goal_region, make_disturbance_schedule, observe, DisturbanceConfig, DisturbanceSchedule,
    EnvConfig, EpisodeMode, Observation,
};
use crate::error::{Error, Result};
use crate::networks::{observation_matrix, Policy};
use crate::scalar::Real;

pub use plot::{
    read_trajectory_csv, render_svg, write_trajectory_csv, write_trajectory_svg, PanelAxis,
    PlotLayout, TRAJECTORY_HEADER,
};

/// Trial seeds used for the acrobot.
pub const ACROBOT_SEEDS: [u64; 5] = [35, 177, 1670, 334, 15793];
/// Trial seeds used for the pendubot.
pub const PENDUBOT_SEEDS: [u64; 5] = [6362, 1709, 49219, 83, 558];

pub fn default_seeds(variant: RobotVariant) -> Vec<u64> {
    match variant {
        RobotVariant::Acrobot => ACROBOT_SEEDS.to_vec(),
        RobotVariant::Pendubot => PENDUBOT_SEEDS.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Trial length, s.
    pub duration: f64,
    /// Empty means the variant's default seed list.
    pub seeds: Vec<u64>,
    /// Diverged trials score 0 instead of their accumulated time.
    pub strict: bool,
    pub disturbance: DisturbanceConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            seeds: Vec::new(),
            strict: true,
            disturbance: DisturbanceConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::param("duration", "must be > 0"));
        }
        self.disturbance.validate()
    }

    pub fn seeds_for(&self, variant: RobotVariant) -> Vec<u64> {
        if self.seeds.is_empty() {
            default_seeds(variant)
        } else {
            self.seeds.clone()
        }
    }
}

/// Anything that maps the current observation to a normalised action.
pub trait Controller<T> {
    fn action(&mut self, obs: &Observation<T>, state: &PlantState<T>) -> T;

    fn id(&self) -> String;
}

/// Deterministic policy: `tanh(mean)`.
#[derive(Debug, Clone)]
pub struct PolicyController<T> {
    pub policy: Policy<T>,
    pub name: String,
}

impl<T: Real> PolicyController<T> {
    pub fn new(policy: Policy<T>, name: impl Into<String>) -> Self {
        Self {
            policy,
            name: name.into(),
        }
    }
}

impl<T: Real> Controller<T> for PolicyController<T> {
    fn action(&mut self, obs: &Observation<T>, _state: &PlantState<T>) -> T {
        let x = observation_matrix(std::slice::from_ref(obs));
        self.policy.means(&x)[0].tanh()
    }

    fn id(&self) -> String {
        self.name.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint<T> {
    pub t: T,
    pub state: PlantState<T>,
    /// Motor torque held over `[t, t + dt)`; the last row repeats the previous one.
    pub torque: T,
    pub in_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult<T> {
    pub seed: u64,
    /// `time_in_goal / duration`, before any strict-mode zeroing.
    pub score: f64,
    pub time_in_goal: f64,
    pub duration: f64,
    pub dt: f64,
    pub trajectory: Vec<TrajectoryPoint<T>>,
    pub disturbances: DisturbanceSchedule<T>,
    pub diverged: bool,
}

/// Time in goal and score for a recorded trajectory.
///
/// The first row is the initial state; each later row is the state reached by
/// one control step and contributes `dt` when it lies in the goal region.
pub fn score_trajectory<T>(points: &[TrajectoryPoint<T>], dt: f64, duration: f64) -> (f64, f64) {
    let in_goal = points.iter().skip(1).filter(|p| p.in_goal).count();
    let time = in_goal as f64 * dt;
    (time, (time / duration).clamp(0.0, 1.0))
}

/// Number of control steps in a trial of `duration` seconds.
pub fn trial_steps(duration: f64, dt: f64) -> usize {
    (duration / dt).round() as usize
}

/// Runs one trial from the hanging rest state. A divergence (simulator error
/// or non-finite action) ends the trial early and sets `diverged`; the score
/// then reflects the time accumulated so far.
pub fn run_trial<T: Real, C: Controller<T> + ?Sized>(
    controller: &mut C,
    variant: RobotVariant,
    params: &PlantParams<T>,
    env_cfg: &EnvConfig<T>,
    eval: &EvalConfig,
    seed: u64,
) -> TrialResult<T> {
    let cfg = env_cfg.clone().with_mode(EpisodeMode::Eval);
    let dt = params.dt.as_f64();
    let n = trial_steps(eval.duration, dt);
    let disturbances = if eval.disturbance.enabled {
        make_disturbance_schedule(T::lit(eval.duration), seed, &eval.disturbance)
    } else {
        DisturbanceSchedule::empty(seed)
    };

    let mut state = PlantState::zero();
    let mut trajectory = Vec::with_capacity(n + 1);
    let mut diverged = false;
    let mut last_torque = T::zero();
    for k in 0..n {
        let t = T::lit(k as f64 * dt);
        let obs = observe(&state, &cfg);
        let action = controller.action(&obs, &state);
        let torques = match apply_actuation(variant, action, params) {
            Ok(tq) => tq,
            Err(_) => {
                diverged = true;
                break;
            }
        };
        let motor = torques[variant.actuated_joint()];
        trajectory.push(TrajectoryPoint {
            t,
            state,
            torque: motor,
            in_goal: in_goal_region(&state, &cfg, params),
        });
        last_torque = motor;
        let mut applied = torques;
        if let Some(d) = disturbances.torque_at(t) {
            applied[0] += d[0];
            applied[1] += d[1];
        }
        match step(&state, applied, params) {
            Ok(next) => state = next,
            Err(_) => {
                diverged = true;
                break;
            }
        }
    }
    if !diverged {
        trajectory.push(TrajectoryPoint {
            t: T::lit(n as f64 * dt),
            state,
            torque: last_torque,
            in_goal: in_goal_region(&state, &cfg, params),
        });
    }
    let (time_in_goal, score) = score_trajectory(&trajectory, dt, eval.duration);
    TrialResult {
        seed,
        score,
        time_in_goal,
        duration: eval.duration,
        dt,
        trajectory,
        disturbances,
        diverged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    /// Reported score; 0 for a diverged trial in strict mode.
    pub score: f64,
    /// Accumulated `time_in_goal / duration`.
    pub raw_score: f64,
    pub time_in_goal: f64,
    pub diverged: bool,
    pub disturbance_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub controller_id: String,
    pub variant: RobotVariant,
    pub strict: bool,
    pub trials: Vec<TrialSummary>,
    pub average_score: f64,
    /// Resolved configuration the trials ran with.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn from_trials<T>(
        controller_id: String,
        variant: RobotVariant,
        strict: bool,
        results: &[TrialResult<T>],
        config: serde_json::Value,
    ) -> Self {
        let trials: Vec<TrialSummary> = results
            .iter()
            .map(|r| TrialSummary {
                seed: r.seed,
                score: if strict && r.diverged { 0.0 } else { r.score },
                raw_score: r.score,
                time_in_goal: r.time_in_goal,
                diverged: r.diverged,
                disturbance_events: r.disturbances.events.len(),
            })
            .collect();
        let average_score = if trials.is_empty() {
            0.0
        } else {
            trials.iter().map(|t| t.score).sum::<f64>() / trials.len() as f64
        };
        Self {
            controller_id,
            variant,
            strict,
            trials,
            average_score,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Flat `(seed, score, diverged)` table.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("seed,score,diverged\n");
        for t in &self.trials {
            out.push_str(&format!("{},{},{}\n", t.seed, t.score, t.diverged));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Plain-text table: one row per trial, `(E)` marks diverged trials.
    pub fn table(&self) -> String {
        let mut out = format!("{:<12}{:>12}\n", "Trial #", self.controller_id);
        for (i, t) in self.trials.iter().enumerate() {
            let mark = if t.diverged { " (E)" } else { "" };
            out.push_str(&format!(
                "{:<12}{:>12}\n",
                format!("Trial_{}", i + 1),
                format!("{:.3}{mark}", t.score)
            ));
        }
        out.push_str(&format!(
            "{:<12}{:>12.3}\n",
            "Avg Score", self.average_score
        ));
        out
    }
}

/// One trial per seed, run in parallel; the report keeps the seed order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_multi_seed<T, C>(
    controller: &C,
    variant: RobotVariant,
    params: &PlantParams<T>,
    env_cfg: &EnvConfig<T>,
    eval: &EvalConfig,
    seeds: &[u64],
    config_snapshot: serde_json::Value,
) -> Result<(EvalReport, Vec<TrialResult<T>>)>
where
    T: Real,
    C: Controller<T> + Clone + Send + Sync,
{
    if seeds.is_empty() {
        return Err(Error::param("seeds", "at least one seed is required"));
    }
    let results: Vec<TrialResult<T>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = controller.clone();
            run_trial(&mut c, variant, params, env_cfg, eval, seed)
        })
        .collect();
    let report = EvalReport::from_trials(
        controller.id(),
        variant,
        eval.strict,
        &results,
        config_snapshot,
    );
    Ok((report, results))
}

/// Writes `<stem>.csv`, `<stem>.svg` and `<stem>_disturbances.csv` into `dir`.
pub fn export_trajectory<T: Real>(
    result: &TrialResult<T>,
    dir: &Path,
    stem: &str,
    torque_limit: f64,
) -> Result<()> {
    write_trajectory_csv(&result.trajectory, &dir.join(format!("{stem}.csv")))?;
    write_trajectory_svg(
        &result.trajectory,
        torque_limit,
        &dir.join(format!("{stem}.svg")),
    )?;
    result
        .disturbances
        .write_csv(&dir.join(format!("{stem}_disturbances.csv")))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Holds the plant exactly at the upright configuration by reporting
    /// in-goal states; used through the scorer only.
    fn synthetic(n: usize, in_goal: impl Fn(usize) -> bool) -> Vec<TrajectoryPoint<f64>> {
        (0..=n)
            .map(|k| TrajectoryPoint {
                t: k as f64 * 0.01,
                state: PlantState::zero(),
                torque: 0.0,
                in_goal: k > 0 && in_goal(k),
            })
            .collect()
    }

    #[test]
    fn scorer_bounds_and_half() {
        let all = synthetic(6000, |_| true);
        assert_eq!(score_trajectory(&all, 0.01, 60.0).1, 1.0);
        let none = synthetic(6000, |_| false);
        assert_eq!(score_trajectory(&none, 0.01, 60.0).1, 0.0);
        let half = synthetic(6000, |k| k % 2 == 0);
        let (time, score) = score_trajectory(&half, 0.01, 60.0);
        assert!((score - 0.5).abs() < 1e-12);
        assert!((time - 30.0).abs() < 1e-9);
    }

    struct Constant(f64);

    impl Controller<f64> for Constant {
        fn action(&mut self, _: &Observation<f64>, _: &PlantState<f64>) -> f64 {
            self.0
        }
        fn id(&self) -> String {
            "constant".into()
        }
    }

    #[test]
    fn zero_torque_from_rest_scores_zero() {
        let eval = EvalConfig {
            disturbance: DisturbanceConfig {
                enabled: false,
                ..DisturbanceConfig::default()
            },
            ..EvalConfig::default()
        };
        let p = PlantParams::<f64>::default();
        let r = run_trial(
            &mut Constant(0.0),
            RobotVariant::Pendubot,
            &p,
            &EnvConfig::default(),
            &eval,
            1,
        );
        assert_eq!(r.score, 0.0);
        assert_eq!(r.trajectory.len(), 6001);
        assert!(!r.diverged);
    }

    #[test]
    fn nan_controller_is_flagged() {
        let p = PlantParams::<f64>::default();
        let r = run_trial(
            &mut Constant(f64::NAN),
            RobotVariant::Acrobot,
            &p,
            &EnvConfig::default(),
            &EvalConfig::default(),
            3,
        );
        assert!(r.diverged);
    }

    fn fake_result(seed: u64, score: f64, diverged: bool) -> TrialResult<f64> {
        TrialResult {
            seed,
            score,
            time_in_goal: score * 60.0,
            duration: 60.0,
            dt: 0.01,
            trajectory: Vec::new(),
            disturbances: DisturbanceSchedule::empty(seed),
            diverged,
        }
    }

    #[test]
    fn report_average_and_strict_mode() {
        let results: Vec<_> = (0..5).map(|i| fake_result(i, 1.0, i == 2)).collect();
        let strict = EvalReport::from_trials(
            "x".into(),
            RobotVariant::Acrobot,
            true,
            &results,
            serde_json::Value::Null,
        );
        assert!((strict.average_score - 0.8).abs() < 1e-12);
        assert_eq!(strict.trials[2].score, 0.0);
        let lenient = EvalReport::from_trials(
            "x".into(),
            RobotVariant::Acrobot,
            false,
            &results,
            serde_json::Value::Null,
        );
        assert_eq!(lenient.average_score, 1.0);

        let same: Vec<_> = (0..3).map(|i| fake_result(i, 0.25, false)).collect();
        let r = EvalReport::from_trials(
            "x".into(),
            RobotVariant::Pendubot,
            true,
            &same,
            serde_json::Value::Null,
        );
        assert_eq!(r.average_score, 0.25);
        assert!(r.table().contains("Avg Score"));
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let p = PlantParams::<f64>::default();
        let c = PolicyController::new(Policy::<f64>::zeros(&[4], 0.5), "zero");
        let err = evaluate_multi_seed(
            &c,
            RobotVariant::Acrobot,
            &p,
            &EnvConfig::default(),
            &EvalConfig::default(),
            &[],
            serde_json::Value::Null,
        );
        assert!(err.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn score_in_unit_interval_and_monotone(flags in proptest::collection::vec(any::<bool>(), 1..400), extra in 0usize..400) {
                let n = flags.len();
                let pts = synthetic(n, |k| flags[k - 1]);
                let dt = 60.0 / n as f64;
                let (_, s) = score_trajectory(&pts, dt, 60.0);
                prop_assert!((0.0..=1.0).contains(&s));
                let mut more = pts.clone();
                let idx = 1 + extra % n;
                more[idx].in_goal = true;
                let (_, s2) = score_trajectory(&more, dt, 60.0);
                prop_assert!(s2 >= s);
            }
        }
    }
}
