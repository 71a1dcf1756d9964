//! Plant model of the magnet stage and the pen estimator.
//!
//! State `x = [p_m, v_m, alpha, theta]` (6 scalars), input
//! `u = [a_m, alpha_dot, theta_dot]` (4 scalars), forward-Euler discretized
//! and projected onto the admissible box after every step.

use nalgebra::{Matrix2x4, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::geom::{Rect, Vec2};

/// Default control period (s).
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub magnet_pos: Vec2,
    pub magnet_vel: Vec2,
    pub alpha: f64,
    pub theta: f64,
}

impl SystemState {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.magnet_pos.x,
            self.magnet_pos.y,
            self.magnet_vel.x,
            self.magnet_vel.y,
            self.alpha,
            self.theta,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        SystemState {
            magnet_pos: Vec2::new(a[0], a[1]),
            magnet_vel: Vec2::new(a[2], a[3]),
            alpha: a[4],
            theta: a[5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: Vec2,
    pub alpha_rate: f64,
    pub theta_rate: f64,
}

impl ControlInput {
    pub fn to_array(&self) -> [f64; 4] {
        [self.accel.x, self.accel.y, self.alpha_rate, self.theta_rate]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ControlInput {
            accel: Vec2::new(a[0], a[1]),
            alpha_rate: a[2],
            theta_rate: a[3],
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn symmetric(r: f64) -> Self {
        Interval { lo: -r, hi: r }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DynamicsError {
    #[error("interval `{0}` must satisfy lo < hi")]
    EmptyInterval(&'static str),
    #[error("progress rate lower bound must be >= 0, got {0}")]
    NegativeProgress(f64),
    #[error("pen covariance is not symmetric positive definite")]
    CovarianceNotPd,
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

/// Admissible state set (chi) and input set (zeta) as boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissibleSets {
    /// Reachable magnet positions (m).
    pub workspace: Rect,
    /// Per-axis magnet speed bound (m/s).
    pub speed: Interval,
    /// Per-axis magnet acceleration bound (m/s^2).
    pub accel: Interval,
    pub alpha: Interval,
    /// Duty rate bound (1/s).
    pub alpha_rate: Interval,
    /// Progress rate bound (m/s); never negative.
    pub theta_rate: Interval,
}

impl Default for AdmissibleSets {
    fn default() -> Self {
        AdmissibleSets {
            workspace: Rect::new(Vec2::zeros(), Vec2::new(0.23, 0.13)),
            speed: Interval::symmetric(0.2),
            accel: Interval::symmetric(2.0),
            alpha: Interval::new(0.0, 1.0),
            alpha_rate: Interval::symmetric(5.0),
            theta_rate: Interval::new(0.0, 0.3),
        }
    }
}

impl AdmissibleSets {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let w = &self.workspace;
        let checks = [
            ("workspace.x", w.min[0], w.max[0]),
            ("workspace.y", w.min[1], w.max[1]),
            ("speed", self.speed.lo, self.speed.hi),
            ("accel", self.accel.lo, self.accel.hi),
            ("alpha", self.alpha.lo, self.alpha.hi),
            ("alpha_rate", self.alpha_rate.lo, self.alpha_rate.hi),
            ("theta_rate", self.theta_rate.lo, self.theta_rate.hi),
        ];
        for (name, lo, hi) in checks {
            if !(lo < hi) {
                return Err(DynamicsError::EmptyInterval(name));
            }
        }
        if self.theta_rate.lo < 0.0 {
            return Err(DynamicsError::NegativeProgress(self.theta_rate.lo));
        }
        Ok(())
    }

    /// State box for a path of length `path_length`.
    pub fn state_bounds(&self, path_length: f64) -> [Interval; 6] {
        let w = &self.workspace;
        [
            Interval::new(w.min[0], w.max[0]),
            Interval::new(w.min[1], w.max[1]),
            self.speed,
            self.speed,
            self.alpha,
            Interval::new(0.0, path_length),
        ]
    }

    pub fn input_bounds(&self) -> [Interval; 4] {
        [self.accel, self.accel, self.alpha_rate, self.theta_rate]
    }

    pub fn project_state(&self, state: &SystemState, path_length: f64) -> SystemState {
        let b = self.state_bounds(path_length);
        let a = state.to_array();
        SystemState::from_array(std::array::from_fn(|i| b[i].clamp(a[i])))
    }

    pub fn contains_state(&self, state: &SystemState, path_length: f64) -> bool {
        let b = self.state_bounds(path_length);
        state.to_array().iter().zip(b.iter()).all(|(v, i)| i.contains(*v))
    }

    pub fn contains_input(&self, input: &ControlInput) -> bool {
        let b = self.input_bounds();
        input.to_array().iter().zip(b.iter()).all(|(v, i)| i.contains(*v))
    }
}

/// Componentwise clamp of `input` into the admissible input box.
pub fn project_input(input: &ControlInput, sets: &AdmissibleSets) -> ControlInput {
    let b = sets.input_bounds();
    let a = input.to_array();
    ControlInput::from_array(std::array::from_fn(|i| b[i].clamp(a[i])))
}

/// Forward-Euler step without projection. Linear in `(state, input)`.
pub fn euler_step(state: &SystemState, input: &ControlInput, dt: f64) -> SystemState {
    SystemState {
        magnet_pos: state.magnet_pos + state.magnet_vel * dt,
        magnet_vel: state.magnet_vel + input.accel * dt,
        alpha: state.alpha + input.alpha_rate * dt,
        theta: state.theta + input.theta_rate * dt,
    }
}

/// Forward-Euler step projected onto the admissible state set.
pub fn step(
    state: &SystemState,
    input: &ControlInput,
    dt: f64,
    sets: &AdmissibleSets,
    path_length: f64,
) -> SystemState {
    sets.project_state(&euler_step(state, input, dt), path_length)
}

/// Like [`step`], also reporting which state components hit a bound.
pub(crate) fn step_with_mask(
    state: &SystemState,
    input: &ControlInput,
    dt: f64,
    bounds: &[Interval; 6],
) -> (SystemState, [bool; 6]) {
    let raw = euler_step(state, input, dt).to_array();
    let mut clamped = [false; 6];
    let out = std::array::from_fn(|i| {
        let v = bounds[i].clamp(raw[i]);
        clamped[i] = v != raw[i];
        v
    });
    (SystemState::from_array(out), clamped)
}

/// Noise parameters of the constant-velocity pen filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    /// White acceleration noise density (m/s^2).
    pub accel_noise: f64,
    /// Position measurement standard deviation (m).
    pub measurement_noise: f64,
    /// Initial velocity standard deviation (m/s).
    pub initial_velocity_sd: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        KalmanParams {
            accel_noise: 0.5,
            measurement_noise: 0.5e-3,
            initial_velocity_sd: 0.5,
        }
    }
}

/// Pen position/velocity estimate. State order `[x, y, vx, vy]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenEstimate {
    pub position: Vec2,
    pub velocity: Vec2,
    pub covariance: Matrix4<f64>,
}

impl PenEstimate {
    /// Starts the filter at a first measurement with zero velocity.
    pub fn initialize(measurement: Vec2, params: &KalmanParams) -> Self {
        let r = params.measurement_noise.powi(2);
        let v = params.initial_velocity_sd.powi(2);
        PenEstimate {
            position: measurement,
            velocity: Vec2::zeros(),
            covariance: Matrix4::from_diagonal(&Vector4::new(r, r, v, v)),
        }
    }

    fn state(&self) -> Vector4<f64> {
        Vector4::new(
            self.position.x,
            self.position.y,
            self.velocity.x,
            self.velocity.y,
        )
    }

    pub fn covariance_is_valid(&self) -> bool {
        let c = &self.covariance;
        if !c.iter().all(|v| v.is_finite()) {
            return false;
        }
        let scale = c.amax().max(f64::MIN_POSITIVE);
        if (c - c.transpose()).amax() > 1e-9 * scale {
            return false;
        }
        c.cholesky().is_some()
    }
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

fn process_noise(dt: f64, accel_noise: f64) -> Matrix4<f64> {
    let q = accel_noise * accel_noise;
    let (a, b, c) = (dt.powi(4) / 4.0 * q, dt.powi(3) / 2.0 * q, dt * dt * q);
    let mut m = Matrix4::zeros();
    for axis in 0..2 {
        m[(axis, axis)] = a;
        m[(axis, axis + 2)] = b;
        m[(axis + 2, axis)] = b;
        m[(axis + 2, axis + 2)] = c;
    }
    m
}

/// Constant-velocity predict followed by a position correction.
pub fn kalman_update(
    est: &PenEstimate,
    measurement: Vec2,
    dt: f64,
    params: &KalmanParams,
) -> Result<PenEstimate, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::BadTimeStep(dt));
    }
    if !est.covariance_is_valid() {
        return Err(DynamicsError::CovarianceNotPd);
    }
    let f = transition(dt);
    let x_pred = f * est.state();
    let p_pred = f * est.covariance * f.transpose() + process_noise(dt, params.accel_noise);

    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let r = nalgebra::Matrix2::identity() * params.measurement_noise.powi(2);
    let innovation = measurement - h * x_pred;
    let s = h * p_pred * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or(DynamicsError::CovarianceNotPd)?;
    let k = p_pred * h.transpose() * s_inv;
    let x = x_pred + k * innovation;
    // Joseph form keeps the update symmetric positive definite.
    let i_kh = Matrix4::identity() - k * h;
    let p = i_kh * p_pred * i_kh.transpose() + k * r * k.transpose();
    let p = (p + p.transpose()) * 0.5;
    Ok(PenEstimate {
        position: Vec2::new(x[0], x[1]),
        velocity: Vec2::new(x[2], x[3]),
        covariance: p,
    })
}

/// Constant-velocity extrapolation for stages `1..=steps`.
pub fn kalman_predict(est: &PenEstimate, steps: usize, dt: f64) -> Vec<Vec2> {
    (1..=steps)
        .map(|k| est.position + est.velocity * (k as f64 * dt))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_input_moves_by_velocity() {
        let s = SystemState {
            magnet_pos: Vec2::new(0.1, 0.05),
            magnet_vel: Vec2::new(0.1, -0.05),
            alpha: 0.3,
            theta: 0.02,
        };
        let n = step(&s, &ControlInput::default(), 0.01, &AdmissibleSets::default(), 1.0);
        assert_relative_eq!(n.magnet_pos.x, 0.101, max_relative = 1e-12);
        assert_relative_eq!(n.magnet_pos.y, 0.0495, max_relative = 1e-12);
        assert_eq!(n.magnet_vel, s.magnet_vel);
        assert_eq!(n.alpha, 0.3);
    }

    #[test]
    fn constant_acceleration_matches_kinematics() {
        let sets = AdmissibleSets {
            speed: Interval::symmetric(10.0),
            workspace: Rect::new(Vec2::new(-10.0, -10.0), Vec2::new(10.0, 10.0)),
            ..Default::default()
        };
        let a = 1.5;
        let dt = 0.01;
        let mut s = SystemState::default();
        let u = ControlInput {
            accel: Vec2::new(a, 0.0),
            ..Default::default()
        };
        for k in 1..=50 {
            s = step(&s, &u, dt, &sets, 1.0);
            let t = k as f64 * dt;
            assert!((s.magnet_pos.x - 0.5 * a * t * t).abs() <= 1.5 * a * t * dt);
        }
    }

    #[test]
    fn alpha_saturates() {
        let s = SystemState {
            alpha: 1.0,
            ..Default::default()
        };
        let u = ControlInput {
            alpha_rate: 3.0,
            ..Default::default()
        };
        let n = step(&s, &u, 0.01, &AdmissibleSets::default(), 1.0);
        assert_eq!(n.alpha, 1.0);
    }

    #[test]
    fn input_projection_examples() {
        let sets = AdmissibleSets::default();
        let ok = ControlInput {
            accel: Vec2::new(0.5, -1.0),
            alpha_rate: 1.0,
            theta_rate: 0.1,
        };
        assert_eq!(project_input(&ok, &sets), ok);
        let big = ControlInput {
            accel: Vec2::new(10.0, 0.0),
            ..Default::default()
        };
        assert_eq!(project_input(&big, &sets).accel, Vec2::new(2.0, 0.0));
        let back = ControlInput {
            theta_rate: -0.1,
            ..Default::default()
        };
        assert_eq!(project_input(&back, &sets).theta_rate, 0.0);
    }

    #[test]
    fn validate_sets() {
        assert!(AdmissibleSets::default().validate().is_ok());
        let bad = AdmissibleSets {
            theta_rate: Interval::new(-0.1, 0.3),
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(DynamicsError::NegativeProgress(-0.1)));
        let empty = AdmissibleSets {
            alpha: Interval::new(1.0, 1.0),
            ..Default::default()
        };
        assert_eq!(empty.validate(), Err(DynamicsError::EmptyInterval("alpha")));
    }

    #[test]
    fn stationary_pen_has_no_velocity() {
        let params = KalmanParams {
            measurement_noise: 1e-4,
            ..Default::default()
        };
        let p = Vec2::new(0.1, 0.07);
        let mut est = PenEstimate::initialize(p, &params);
        for _ in 0..100 {
            est = kalman_update(&est, p, 0.01, &params).unwrap();
        }
        assert!(est.velocity.norm() < 1e-4);
    }

    #[test]
    fn tracks_constant_velocity() {
        let params = KalmanParams::default();
        let v = Vec2::new(0.05, 0.0);
        let dt = 0.01;
        let p0 = Vec2::new(0.02, 0.06);
        let mut est = PenEstimate::initialize(p0, &params);
        for k in 1..=50 {
            est = kalman_update(&est, p0 + v * (k as f64 * dt), dt, &params).unwrap();
        }
        assert!((est.velocity - v).norm() < 0.01 * v.norm(), "{:?}", est.velocity);
    }

    #[test]
    fn rejects_invalid_covariance() {
        let mut est = PenEstimate::initialize(Vec2::zeros(), &KalmanParams::default());
        est.covariance[(0, 0)] = -1.0;
        assert_eq!(
            kalman_update(&est, Vec2::zeros(), 0.01, &KalmanParams::default()),
            Err(DynamicsError::CovarianceNotPd)
        );
    }

    #[test]
    fn prediction_is_linear() {
        let mut est = PenEstimate::initialize(Vec2::new(0.1, 0.1), &KalmanParams::default());
        assert!(kalman_predict(&est, 5, 0.01).iter().all(|p| *p == est.position));
        est.velocity = Vec2::new(0.1, 0.0);
        let pred = kalman_predict(&est, 10, 0.01);
        assert_eq!(pred.len(), 10);
        assert!((pred[9] - est.position - Vec2::new(0.01, 0.0)).norm() < 1e-15);
    }
}
