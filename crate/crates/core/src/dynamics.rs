//! Two-link pendulum plant with acrobot / pendubot actuation.
//!
//! Angle convention: `q1 = q2 = 0` is the hanging rest state, `q1 = π, q2 = 0`
//! is the upright configuration. The equations of motion are
//!
//! ```text
//! M(q) q̈ + C(q, q̇) q̇ + G(q) + F(q̇) = τ
//! ```
//!
//! with `inertia_i` taken about the joint axis of link `i` (not about its
//! centre of mass), and Coulomb friction smoothed as `coulomb · tanh(q̇ / 0.01)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Velocity scale of the smoothed Coulomb friction, rad/s.
pub const COULOMB_SMOOTHING: f64 = 1e-2;

/// Any state component beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real"))]
pub struct PlantParams<T> {
    pub mass_1: T,
    pub mass_2: T,
    pub length_1: T,
    pub length_2: T,
    pub com_1: T,
    pub com_2: T,
    pub inertia_1: T,
    pub inertia_2: T,
    pub gravity: T,
    pub damping_1: T,
    pub damping_2: T,
    pub coulomb_1: T,
    pub coulomb_2: T,
    pub torque_limit: T,
    pub dt: T,
    pub integrator_substeps: usize,
}

impl<T: Real> Default for PlantParams<T> {
    /// Double pendulum of the competition test bench (0.3 m / 0.2 m links,
    /// point-mass-like inertias about the joints, 6 N·m actuator).
    fn default() -> Self {
        Self {
            mass_1: T::lit(0.608),
            mass_2: T::lit(0.630),
            length_1: T::lit(0.3),
            length_2: T::lit(0.2),
            com_1: T::lit(0.3),
            com_2: T::lit(0.2),
            inertia_1: T::lit(0.0549),
            inertia_2: T::lit(0.0252),
            gravity: T::lit(9.81),
            damping_1: T::lit(0.001),
            damping_2: T::lit(0.001),
            coulomb_1: T::lit(0.093),
            coulomb_2: T::lit(0.14),
            torque_limit: T::lit(6.0),
            dt: T::lit(0.01),
            integrator_substeps: 5,
        }
    }
}

impl<T: Real> PlantParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass_1", self.mass_1),
            ("mass_2", self.mass_2),
            ("length_1", self.length_1),
            ("length_2", self.length_2),
            ("inertia_1", self.inertia_1),
            ("inertia_2", self.inertia_2),
            ("torque_limit", self.torque_limit),
            ("dt", self.dt),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > T::zero()) {
                return Err(Error::param(
                    key,
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        let finite = [
            ("com_1", self.com_1),
            ("com_2", self.com_2),
            ("gravity", self.gravity),
            ("damping_1", self.damping_1),
            ("damping_2", self.damping_2),
            ("coulomb_1", self.coulomb_1),
            ("coulomb_2", self.coulomb_2),
        ];
        for (key, value) in finite {
            if !value.is_finite() {
                return Err(Error::param(key, "must be finite"));
            }
        }
        if self.integrator_substeps == 0 {
            return Err(Error::param("integrator_substeps", "must be >= 1"));
        }
        Ok(())
    }

    /// Converts every field to another scalar type.
    pub fn cast<U: Real>(&self) -> PlantParams<U> {
        let c = |x: T| U::lit(x.as_f64());
        PlantParams {
            mass_1: c(self.mass_1),
            mass_2: c(self.mass_2),
            length_1: c(self.length_1),
            length_2: c(self.length_2),
            com_1: c(self.com_1),
            com_2: c(self.com_2),
            inertia_1: c(self.inertia_1),
            inertia_2: c(self.inertia_2),
            gravity: c(self.gravity),
            damping_1: c(self.damping_1),
            damping_2: c(self.damping_2),
            coulomb_1: c(self.coulomb_1),
            coulomb_2: c(self.coulomb_2),
            torque_limit: c(self.torque_limit),
            dt: c(self.dt),
            integrator_substeps: self.integrator_substeps,
        }
    }

    /// Frictionless copy, used by the conservation tests.
    pub fn without_friction(mut self) -> Self {
        self.damping_1 = T::zero();
        self.damping_2 = T::zero();
        self.coulomb_1 = T::zero();
        self.coulomb_2 = T::zero();
        self
    }
}

/// Raw joint state; angles are not wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState<T> {
    pub q1: T,
    pub q2: T,
    pub qd1: T,
    pub qd2: T,
}

impl<T: Real> PlantState<T> {
    pub fn new(q1: T, q2: T, qd1: T, qd2: T) -> Self {
        Self { q1, q2, qd1, qd2 }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn upright() -> Self {
        Self::new(T::PI(), T::zero(), T::zero(), T::zero())
    }

    pub fn to_array(self) -> [T; 4] {
        [self.q1, self.q2, self.qd1, self.qd2]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    fn axpy(self, h: T, d: [T; 4]) -> Self {
        Self::new(
            self.q1 + h * d[0],
            self.q2 + h * d[1],
            self.qd1 + h * d[2],
            self.qd2 + h * d[3],
        )
    }
}

/// Which joint carries the motor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RobotVariant {
    /// Passive shoulder, actuated elbow.
    Acrobot,
    /// Actuated shoulder, passive elbow.
    Pendubot,
}

impl RobotVariant {
    pub fn name(self) -> &'static str {
        match self {
            RobotVariant::Acrobot => "acrobot",
            RobotVariant::Pendubot => "pendubot",
        }
    }

    /// Index of the actuated joint (0 = shoulder, 1 = elbow).
    pub fn actuated_joint(self) -> usize {
        match self {
            RobotVariant::Acrobot => 1,
            RobotVariant::Pendubot => 0,
        }
    }
}

impl std::fmt::Display for RobotVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RobotVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acrobot" => Ok(RobotVariant::Acrobot),
            "pendubot" => Ok(RobotVariant::Pendubot),
            other => Err(Error::param(
                "variant",
                format!("unknown robot variant `{other}`"),
            )),
        }
    }
}

/// Mass matrix entries `(m11, m12, m22)`.
fn mass_matrix<T: Real>(q2: T, p: &PlantParams<T>) -> (T, T, T) {
    let coupling = p.mass_2 * p.length_1 * p.com_2 * q2.cos();
    let m22 = p.inertia_2;
    let m12 = p.inertia_2 + coupling;
    let m11 =
        p.inertia_1 + p.inertia_2 + p.mass_2 * p.length_1 * p.length_1 + (coupling + coupling);
    (m11, m12, m22)
}

/// Gravity torque vector `G(q)`, the gradient of the potential energy.
pub fn gravity_torques<T: Real>(q1: T, q2: T, p: &PlantParams<T>) -> [T; 2] {
    let s1 = q1.sin();
    let s12 = (q1 + q2).sin();
    let g = p.gravity;
    [
        g * (p.mass_1 * p.com_1 * s1 + p.mass_2 * (p.length_1 * s1 + p.com_2 * s12)),
        g * p.mass_2 * p.com_2 * s12,
    ]
}

fn friction<T: Real>(qd: T, damping: T, coulomb: T) -> T {
    damping * qd + coulomb * (qd / T::lit(COULOMB_SMOOTHING)).tanh()
}

/// Joint accelerations for the given state and joint torques.
pub fn forward_dynamics<T: Real>(
    state: &PlantState<T>,
    joint_torques: [T; 2],
    params: &PlantParams<T>,
) -> Result<[T; 2]> {
    if !state.is_finite() {
        return Err(Error::InvalidState(format!("non-finite state {state:?}")));
    }
    if !(joint_torques[0].is_finite() && joint_torques[1].is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite torques {joint_torques:?}"
        )));
    }
    Ok(accelerations(state, joint_torques, params))
}

#[inline]
fn accelerations<T: Real>(s: &PlantState<T>, tau: [T; 2], p: &PlantParams<T>) -> [T; 2] {
    let (m11, m12, m22) = mass_matrix(s.q2, p);
    let h = p.mass_2 * p.length_1 * p.com_2 * s.q2.sin();
    let two = T::lit(2.0);
    let coriolis = [
        -two * h * s.qd1 * s.qd2 - h * s.qd2 * s.qd2,
        h * s.qd1 * s.qd1,
    ];
    let grav = gravity_torques(s.q1, s.q2, p);
    let fric = [
        friction(s.qd1, p.damping_1, p.coulomb_1),
        friction(s.qd2, p.damping_2, p.coulomb_2),
    ];
    let rhs0 = tau[0] - coriolis[0] - grav[0] - fric[0];
    let rhs1 = tau[1] - coriolis[1] - grav[1] - fric[1];
    let det = m11 * m22 - m12 * m12;
    // NaN passes through; the caller reports divergence
    debug_assert!(
        det > T::zero() || det.is_nan(),
        "mass matrix must be positive definite"
    );
    [
        (m22 * rhs0 - m12 * rhs1) / det,
        (m11 * rhs1 - m12 * rhs0) / det,
    ]
}

#[inline]
fn derivative<T: Real>(s: &PlantState<T>, tau: [T; 2], p: &PlantParams<T>) -> [T; 4] {
    let acc = accelerations(s, tau, p);
    [s.qd1, s.qd2, acc[0], acc[1]]
}

/// Maps a normalised action to joint torques, clipping to `[-1, 1]`.
pub fn apply_actuation<T: Real>(
    variant: RobotVariant,
    normalized_action: T,
    params: &PlantParams<T>,
) -> Result<[T; 2]> {
    if !normalized_action.is_finite() {
        return Err(Error::InvalidAction(format!(
            "non-finite action {normalized_action}"
        )));
    }
    let torque = normalized_action.max(-T::one()).min(T::one()) * params.torque_limit;
    Ok(match variant {
        RobotVariant::Acrobot => [T::zero(), torque],
        RobotVariant::Pendubot => [torque, T::zero()],
    })
}

/// Advances one control step with RK4 over `integrator_substeps` substeps,
/// holding the torques constant.
pub fn step<T: Real>(
    state: &PlantState<T>,
    joint_torques: [T; 2],
    params: &PlantParams<T>,
) -> Result<PlantState<T>> {
    forward_dynamics(state, joint_torques, params)?;
    let h = params.dt / T::from_usize(params.integrator_substeps).unwrap();
    let half = h / T::lit(2.0);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut s = *state;
    for _ in 0..params.integrator_substeps {
        let k1 = derivative(&s, joint_torques, params);
        let k2 = derivative(&s.axpy(half, k1), joint_torques, params);
        let k3 = derivative(&s.axpy(half, k2), joint_torques, params);
        let k4 = derivative(&s.axpy(h, k3), joint_torques, params);
        let mut d = [T::zero(); 4];
        for i in 0..4 {
            d[i] = k1[i] + two * k2[i] + two * k3[i] + k4[i];
        }
        s = s.axpy(sixth, d);
    }
    let limit = T::lit(DIVERGENCE_LIMIT);
    if s.to_array()
        .iter()
        .any(|x| !x.is_finite() || x.abs() > limit)
    {
        return Err(Error::SimulationDiverged(format!("state {s:?}")));
    }
    Ok(s)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle<T: Real>(q: T) -> T {
    let two_pi = T::TAU();
    let mut r = q - two_pi * ((q + T::PI()) / two_pi).floor();
    // r is in [-π, π) up to rounding
    if r <= -T::PI() {
        r += two_pi;
    } else if r > T::PI() {
        r -= two_pi;
    }
    r
}

/// Shortest signed angular difference `a - b`, in `(-π, π]`.
pub fn angle_difference<T: Real>(a: T, b: T) -> T {
    wrap_angle(a - b)
}

/// Kinetic plus potential energy; zero at the hanging rest state.
pub fn total_energy<T: Real>(state: &PlantState<T>, params: &PlantParams<T>) -> T {
    let (m11, m12, m22) = mass_matrix(state.q2, params);
    let half = T::lit(0.5);
    let kinetic = half
        * (m11 * state.qd1 * state.qd1
            + T::lit(2.0) * m12 * state.qd1 * state.qd2
            + m22 * state.qd2 * state.qd2);
    kinetic + potential_energy(state.q1, state.q2, params)
}

pub fn potential_energy<T: Real>(q1: T, q2: T, p: &PlantParams<T>) -> T {
    let c1 = q1.cos();
    let c12 = (q1 + q2).cos();
    let g = p.gravity;
    g * p.mass_1 * p.com_1 * (T::one() - c1)
        + g * p.mass_2 * (p.length_1 * (T::one() - c1) + p.com_2 * (T::one() - c12))
}

/// Height of the end effector above the shoulder.
pub fn end_effector_height<T: Real>(state: &PlantState<T>, params: &PlantParams<T>) -> T {
    -params.length_1 * state.q1.cos() - params.length_2 * (state.q1 + state.q2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn frictionless() -> PlantParams<f64> {
        PlantParams::default().without_friction()
    }

    #[test]
    fn equilibria_have_zero_acceleration() {
        let p = frictionless();
        let hang = forward_dynamics(&PlantState::zero(), [0.0, 0.0], &p).unwrap();
        assert_eq!(hang, [0.0, 0.0]);
        let up = forward_dynamics(&PlantState::upright(), [0.0, 0.0], &p).unwrap();
        // sin(π) is not exactly zero in floating point
        assert!(up[0].abs() < 1e-12 && up[1].abs() < 1e-12, "{up:?}");
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let p = frictionless();
        let bad = PlantState::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(
            forward_dynamics(&bad, [0.0, 0.0], &p),
            Err(Error::InvalidState(_))
        ));
        assert!(forward_dynamics(&PlantState::zero(), [f64::INFINITY, 0.0], &p).is_err());
        assert!(matches!(
            apply_actuation(RobotVariant::Acrobot, f64::NAN, &p),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn actuation_routes_and_clips() {
        let p = PlantParams::<f64>::default();
        assert_eq!(
            apply_actuation(RobotVariant::Acrobot, 0.5, &p).unwrap(),
            [0.0, 3.0]
        );
        assert_eq!(
            apply_actuation(RobotVariant::Pendubot, -1.0, &p).unwrap(),
            [-6.0, 0.0]
        );
        assert_eq!(
            apply_actuation(RobotVariant::Pendubot, 1.5, &p).unwrap(),
            [6.0, 0.0]
        );
    }

    #[test]
    fn zero_gravity_rest_is_fixed_point() {
        let mut p = frictionless();
        p.gravity = 0.0;
        let s = PlantState::new(0.3, -1.2, 0.0, 0.0);
        assert_eq!(step(&s, [0.0, 0.0], &p).unwrap(), s);
    }

    #[test]
    fn step_is_deterministic() {
        let p = PlantParams::<f64>::default();
        let s = PlantState::new(0.4, -0.2, 1.0, 3.0);
        let a = step(&s, [0.3, 1.0], &p).unwrap();
        let b = step(&s, [0.3, 1.0], &p).unwrap();
        assert_eq!(
            a.to_array().map(f64::to_bits),
            b.to_array().map(f64::to_bits)
        );
    }

    #[test]
    fn divergence_is_reported() {
        let p = PlantParams::<f64>::default();
        let s = PlantState::new(0.0, 0.0, 0.0, 0.0);
        let err = step(&s, [1e12, 0.0], &p).unwrap_err();
        assert!(matches!(err, Error::SimulationDiverged(_)));
    }

    #[test]
    fn energy_is_conserved_without_friction() {
        let mut p = frictionless();
        p.dt = 2e-3;
        p.integrator_substeps = 2;
        let mut s = PlantState::new(2.0, -1.0, 0.5, -2.0);
        let e0 = total_energy(&s, &p);
        for _ in 0..5000 {
            s = step(&s, [0.0, 0.0], &p).unwrap();
        }
        let drift = (total_energy(&s, &p) - e0).abs() / e0.abs().max(1.0);
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn small_angle_period_matches_linearisation() {
        // link 2 made negligible so joint 1 behaves as a compound pendulum
        let mut p = frictionless();
        p.mass_2 = 1e-9;
        p.inertia_2 = 1e-9 * p.com_2 * p.com_2;
        p.dt = 1e-3;
        p.integrator_substeps = 1;
        let omega = (p.gravity * p.mass_1 * p.com_1 / p.inertia_1).sqrt();
        let expected = 2.0 * PI / omega;

        let mut s = PlantState::new(0.01, 0.0, 0.0, 0.0);
        let mut t = 0.0;
        let mut crossings = Vec::new();
        while crossings.len() < 4 {
            let next = step(&s, [0.0, 0.0], &p).unwrap();
            if s.q1 < 0.0 && next.q1 >= 0.0 {
                let frac = -s.q1 / (next.q1 - s.q1);
                crossings.push(t + frac * p.dt);
            }
            s = next;
            t += p.dt;
        }
        let period = (crossings[3] - crossings[0]) / 3.0;
        assert_relative_eq!(period, expected, max_relative = 0.01);
    }

    #[test]
    fn reflected_shoulder_or_negated_gravity_flip_accelerations() {
        let p = frictionless();
        let s = PlantState::new(0.7, -0.4, 0.0, 0.0);
        let base = forward_dynamics(&s, [0.0, 0.0], &p).unwrap();

        let reflected = PlantState::new(s.q1 + PI, s.q2, 0.0, 0.0);
        let r = forward_dynamics(&reflected, [0.0, 0.0], &p).unwrap();
        let mut anti = p;
        anti.gravity = -p.gravity;
        let g = forward_dynamics(&s, [0.0, 0.0], &anti).unwrap();
        let both = forward_dynamics(&reflected, [0.0, 0.0], &anti).unwrap();
        for i in 0..2 {
            assert_relative_eq!(r[i], -base[i], epsilon = 1e-12);
            assert_relative_eq!(g[i], -base[i], epsilon = 1e-12);
            assert_relative_eq!(both[i], base[i], epsilon = 1e-12);
        }
        let tg = gravity_torques(s.q1 + PI, s.q2, &anti);
        let t0 = gravity_torques(s.q1, s.q2, &p);
        assert_relative_eq!(tg[0], t0[0], epsilon = 1e-12);
        assert_relative_eq!(tg[1], t0[1], epsilon = 1e-12);
    }

    #[test]
    fn energy_reference_values() {
        let p = PlantParams::<f64>::default();
        assert_eq!(total_energy(&PlantState::zero(), &p), 0.0);
        let expected = 2.0 * p.gravity * (p.mass_1 * p.com_1 + p.mass_2 * (p.length_1 + p.com_2));
        assert_relative_eq!(
            total_energy(&PlantState::upright(), &p),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn positive_work_raises_energy() {
        let p = frictionless();
        let s = PlantState::new(0.2, 0.1, 0.0, 0.0);
        let e0 = total_energy(&s, &p);
        // torque pushing along the gravity-driven motion does positive work
        let acc = forward_dynamics(&s, [0.0, 0.0], &p).unwrap();
        let push = [acc[0].signum() * 2.0, 0.0];
        let e1 = total_energy(&step(&s, push, &p).unwrap(), &p);
        assert!(e1 > e0, "{e0} -> {e1}");
    }

    #[test]
    fn wrap_angle_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-1.5 * PI), 0.5 * PI, epsilon = 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
    }

    #[test]
    fn generic_over_f32() {
        let p = PlantParams::<f32>::default();
        let s = step(&PlantState::new(0.5f32, 0.0, 0.0, 0.0), [0.0, 0.0], &p).unwrap();
        assert!(s.q1 < 0.5 && s.is_finite());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn circular_gap(a: f64, b: f64) -> f64 {
            let d = (a - b).abs();
            d.min(2.0 * PI - d)
        }

        proptest! {
            #[test]
            fn wrap_is_idempotent(x in -1e3f64..1e3) {
                let w = wrap_angle(x);
                prop_assert!(w > -PI && w <= PI);
                prop_assert_eq!(wrap_angle(w), w);
            }

            #[test]
            fn wrap_is_periodic(x in -100f64..100.0, k in -20i32..20) {
                let shifted = wrap_angle(x + 2.0 * PI * k as f64);
                prop_assert!(circular_gap(shifted, wrap_angle(x)) < 1e-9);
            }

            #[test]
            fn wrap_preserves_angle(x in -1e3f64..1e3) {
                let w = wrap_angle(x);
                prop_assert!(((x - w) / (2.0 * PI) - ((x - w) / (2.0 * PI)).round()).abs() < 1e-9);
            }
        }
    }
}
