//! Closed-loop simulation with a scripted user.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{mpc_controller, open_loop_tick, TimedReference};
use crate::dynamics::SystemState;
use crate::em::{actuation_force, MagnetModel, PlanarForce};
use crate::geom::{left_normal, unit_or_zero, Vec2};
use crate::mpcc::{desired_force, Controller, ControllerConfig, CostTerms, MpccError, DESIRED_FORCE_CAP};
use crate::path::{PathError, ReferencePath};
use crate::shapes::ShapeSpec;
use crate::trace::{SessionTrace, TraceRow};

/// How strongly the user yields to the pull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    /// Follows the force direction regardless of its magnitude.
    #[default]
    DirectionOnly,
    /// Scales the force term by `min(1, |F_a| / F_a^max)`.
    ForceProportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct UserParams {
    pub w_v: f64,
    pub w_m: f64,
    /// Speed scale (m/s).
    pub v_c: f64,
    /// Standard deviation of the heading perturbation, expressed as a
    /// displacement per step (m). Zero disables it.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub compliance: Compliance,
}

impl Default for UserParams {
    fn default() -> Self {
        UserParams {
            w_v: 1.0,
            w_m: 1.0,
            v_c: 0.1,
            jitter: 0.0,
            compliance: Compliance::DirectionOnly,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("user weights must be non-negative and not both zero (w_v = {w_v}, w_m = {w_m})")]
    UserWeights { w_v: f64, w_m: f64 },
    #[error("user speed scale must be positive, got {0}")]
    UserSpeed(f64),
    #[error("`{0}` must be positive and finite")]
    NotPositive(&'static str),
    #[error("`{0}` must be non-negative and finite")]
    Negative(&'static str),
    #[error("path: {0}")]
    Path(#[from] PathError),
    #[error("controller: {0}")]
    Controller(#[from] MpccError),
}

impl UserParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.w_v >= 0.0 && self.w_m >= 0.0) || self.w_v + self.w_m <= 0.0 {
            return Err(SimError::UserWeights {
                w_v: self.w_v,
                w_m: self.w_m,
            });
        }
        if !(self.v_c > 0.0 && self.v_c.is_finite()) {
            return Err(SimError::UserSpeed(self.v_c));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(SimError::Negative("jitter"));
        }
        Ok(())
    }
}

/// Constant-velocity user that blends its own heading with the pull
/// direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedUser {
    pub params: UserParams,
    /// Heading of the last realized step.
    pub velocity: Vec2,
}

impl SimulatedUser {
    pub fn new(params: UserParams, heading: Vec2) -> Result<Self, SimError> {
        params.validate()?;
        Ok(SimulatedUser {
            params,
            velocity: heading,
        })
    }

    /// Next pen position: `p + v_c dt (w_v p_v/|p_v| + w_m e_d)`.
    ///
    /// With jitter enabled the heading is perturbed before normalization,
    /// so the step length never exceeds `v_c dt (w_v + w_m)`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        pen: Vec2,
        force: PlanarForce,
        force_cap: f64,
        dt: f64,
        rng: &mut R,
    ) -> Vec2 {
        let p = &self.params;
        let span = p.v_c * dt;
        let mut heading = unit_or_zero(self.velocity);
        if p.jitter > 0.0 && heading != Vec2::zeros() {
            let n = Normal::new(0.0, p.jitter).expect("finite jitter");
            let noise = Vec2::new(n.sample(rng), n.sample(rng));
            heading = unit_or_zero(heading * span + noise);
        }
        let pull = match p.compliance {
            Compliance::DirectionOnly => 1.0,
            Compliance::ForceProportional => {
                if force_cap > 0.0 {
                    (force.magnitude() / force_cap).min(1.0)
                } else {
                    0.0
                }
            }
        };
        let step = (heading * p.w_v + force.direction() * (p.w_m * pull)) * span;
        if step.norm() > 0.0 {
            self.velocity = step / dt;
        }
        pen + step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ol,
    Mpc,
    Mpcc,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ol, Strategy::Mpc, Strategy::Mpcc];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ol => "ol",
            Strategy::Mpc => "mpc",
            Strategy::Mpcc => "mpcc",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ol" => Ok(Strategy::Ol),
            "mpc" => Ok(Strategy::Mpc),
            "mpcc" => Ok(Strategy::Mpcc),
            other => Err(format!("unknown strategy `{other}` (expected ol, mpc or mpcc)")),
        }
    }
}

/// Interval during which the user holds the pen still.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Pause {
    pub start: f64,
    pub duration: f64,
}

impl Pause {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub shape: ShapeSpec,
    pub strategy: Strategy,
    /// Arc length at which the pen starts (m).
    #[serde(default)]
    pub start_theta: f64,
    /// Initial pen offset from `s(start_theta)` along the tangent and the
    /// left normal (m).
    #[serde(default)]
    pub initial_offset: [f64; 2],
    /// Simulated time (s).
    pub duration: f64,
    pub seed: u64,
    /// Control period (s).
    pub dt: f64,
    #[serde(default)]
    pub user: UserParams,
    #[serde(default)]
    pub pause: Option<Pause>,
    /// Reference speed of the timed strategies (m/s).
    pub v_ref: f64,
    /// Standard deviation of the pen measurement noise (m).
    #[serde(default)]
    pub measurement_noise: f64,
    /// Stop once the pen's projection comes within 1 mm of the path end.
    #[serde(default)]
    pub finish_at_end: bool,
    /// Store wall-clock solve times. Off keeps traces reproducible byte for byte.
    #[serde(default)]
    pub record_timing: bool,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.user.validate()?;
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(SimError::Negative("duration"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::NotPositive("dt"));
        }
        if !(self.v_ref >= 0.0 && self.v_ref.is_finite()) {
            return Err(SimError::Negative("v_ref"));
        }
        if !(self.measurement_noise >= 0.0 && self.measurement_noise.is_finite()) {
            return Err(SimError::Negative("measurement_noise"));
        }
        if let Some(p) = &self.pause {
            if !(p.duration >= 0.0 && p.start >= 0.0) {
                return Err(SimError::Negative("pause"));
            }
        }
        Ok(())
    }
}

/// Distance along the path within which a run counts as finished.
pub const FINISH_MARGIN: f64 = 1e-3;

/// A guidance strategy bound to a path: turns pen measurements into magnet
/// commands and trace rows.
#[derive(Debug, Clone)]
pub struct Guidance {
    ctrl: ControllerConfig,
    path: ReferencePath,
    timed: TimedReference,
    controller: Option<Controller>,
    record_timing: bool,
}

impl Guidance {
    /// The magnet starts switched off below `pen`.
    pub fn new(
        strategy: Strategy,
        ctrl: &ControllerConfig,
        path: ReferencePath,
        v_ref: f64,
        pen: Vec2,
    ) -> Result<Self, SimError> {
        ctrl.validate()?;
        if !(v_ref >= 0.0 && v_ref.is_finite()) {
            return Err(SimError::Negative("v_ref"));
        }
        let initial = SystemState {
            magnet_pos: ctrl.sets.workspace.clamp(pen),
            ..Default::default()
        };
        let timed = TimedReference { v_ref, start: 0.0 };
        let controller = match strategy {
            Strategy::Mpcc => Some(Controller::mpcc(ctrl.clone(), path.clone(), initial)?),
            Strategy::Mpc => Some(mpc_controller(ctrl.clone(), path.clone(), &timed, initial)?),
            Strategy::Ol => None,
        };
        Ok(Guidance {
            ctrl: ctrl.clone(),
            path,
            timed,
            controller,
            record_timing: false,
        })
    }

    /// Store wall-clock solve times in the rows.
    pub fn with_timing(mut self, on: bool) -> Self {
        self.record_timing = on;
        self
    }

    pub fn path(&self) -> &ReferencePath {
        &self.path
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.ctrl
    }

    /// One control period at time `t`. `pen` is the true pen position,
    /// `measured` what the sensor reported.
    pub fn tick(&mut self, pen: Vec2, measured: Vec2, t: f64) -> (TraceRow, PlanarForce) {
        let dt = self.ctrl.dt;
        let (magnet, alpha, theta, estimate, cost, terms, solve_time) = match self.controller.as_mut() {
            Some(c) => {
                let out = c.control_tick(measured, t);
                let d = out.diagnostics;
                (
                    out.state.magnet_pos,
                    out.state.alpha,
                    out.state.theta,
                    d.estimate,
                    d.total_cost,
                    d.terms,
                    d.solve_time,
                )
            }
            None => {
                let cmd = open_loop_tick(&self.path, &self.timed, t + dt);
                (cmd.position, cmd.alpha, cmd.theta, measured, 0.0, CostTerms::default(), 0.0)
            }
        };
        let model = self.ctrl.model;
        let fa = actuation_force(&model, alpha, pen, magnet);
        let target = self.path.eval(theta).point;
        let fth = desired_force(&self.ctrl.weights, &model, pen, target);
        let row = TraceRow {
            t,
            pen: [pen.x, pen.y],
            estimate: [estimate.x, estimate.y],
            magnet: [magnet.x, magnet.y],
            alpha,
            theta,
            setpoint: [target.x, target.y],
            force: [fa.fx, fa.fy],
            desired_force: [fth.fx, fth.fy],
            cost,
            terms,
            solve_ms: if self.record_timing { solve_time * 1e3 } else { 0.0 },
        };
        (row, fa)
    }
}

/// Runs one scenario. Identical inputs give identical traces.
pub fn run_scenario(config: &ScenarioConfig, ctrl: &ControllerConfig) -> Result<SessionTrace, SimError> {
    config.validate()?;
    let path = config.shape.build()?;
    run_on_path(config, ctrl, &path)
}

/// Like [`run_scenario`] for an already built path.
pub fn run_on_path(
    config: &ScenarioConfig,
    ctrl: &ControllerConfig,
    path: &ReferencePath,
) -> Result<SessionTrace, SimError> {
    config.validate()?;
    let mut ctrl = ctrl.clone();
    ctrl.dt = config.dt;
    let force_cap = DESIRED_FORCE_CAP * ctrl.model.f0;

    let start = path.eval(config.start_theta);
    let normal = left_normal(start.tangent);
    let mut pen = start.point
        + start.tangent * config.initial_offset[0]
        + normal * config.initial_offset[1];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut user = SimulatedUser::new(config.user, start.tangent)?;
    let noise = if config.measurement_noise > 0.0 {
        Some(Normal::new(0.0, config.measurement_noise).expect("finite noise"))
    } else {
        None
    };
    let mut guidance =
        Guidance::new(config.strategy, &ctrl, path.clone(), config.v_ref, pen)?.with_timing(config.record_timing);

    let ticks = (config.duration / config.dt + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity(ticks);
    let mut progress: Option<f64> = None;
    for k in 0..ticks {
        let t = k as f64 * config.dt;
        let measured = match &noise {
            Some(n) => pen + Vec2::new(n.sample(&mut rng), n.sample(&mut rng)),
            None => pen,
        };
        let (row, fa) = guidance.tick(pen, measured, t);
        rows.push(row);

        let paused = config.pause.is_some_and(|p| p.contains(t));
        if !paused {
            pen = user.step(pen, fa, force_cap, config.dt, &mut rng);
        }
        let th = path.closest_theta(pen, progress);
        progress = Some(th);
        if config.finish_at_end && th >= path.length() - FINISH_MARGIN {
            break;
        }
    }
    Ok(SessionTrace { rows })
}

/// Settings of the passive-pen dispersion experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionConfig {
    pub repetitions: usize,
    /// Static friction: the pen moves only while `|F_a| >= friction` (N).
    pub friction: f64,
    /// Target the magnet always returns to (m).
    pub center: [f64; 2],
    /// Excursions land uniformly in this radial band around the center (m).
    pub min_excursion: f64,
    pub max_excursion: f64,
    /// Magnet travel speed (m/s).
    pub magnet_speed: f64,
    /// Pen speed while pulled (m/s).
    pub pen_speed: f64,
    /// Simulation step (s).
    pub dt: f64,
    /// Time allowed for the pen to settle after the magnet stops (s).
    pub settle_time: f64,
    pub seed: u64,
}

impl DispersionConfig {
    /// Defaults with the friction chosen so the pull at `stop_distance`
    /// equals it at full strength.
    pub fn with_stop_distance(model: &MagnetModel, stop_distance: f64) -> Self {
        DispersionConfig {
            friction: actuation_force(model, 1.0, Vec2::zeros(), Vec2::new(stop_distance, 0.0)).magnitude(),
            ..Self::default()
        }
    }
}

impl Default for DispersionConfig {
    fn default() -> Self {
        DispersionConfig {
            repetitions: 300,
            friction: 0.0,
            center: [0.115, 0.065],
            min_excursion: 0.01,
            max_excursion: 0.04,
            magnet_speed: 0.05,
            pen_speed: 0.1,
            dt: 1e-3,
            settle_time: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    /// Final pen-to-target offsets (m).
    pub offsets: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Moves the magnet to random spots and back to the center with a passive
/// pen in tow, recording where the pen comes to rest.
pub fn dispersion_experiment(model: &MagnetModel, config: &DispersionConfig) -> Result<DispersionStats, SimError> {
    if config.repetitions == 0 {
        return Err(SimError::NotPositive("repetitions"));
    }
    for (name, v) in [
        ("dt", config.dt),
        ("magnet_speed", config.magnet_speed),
        ("pen_speed", config.pen_speed),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SimError::NotPositive(name));
        }
    }
    if !(config.friction >= 0.0) {
        return Err(SimError::Negative("friction"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let center = Vec2::new(config.center[0], config.center[1]);
    let passive = |pen: &mut Vec2, magnet: Vec2| {
        let f = actuation_force(model, 1.0, *pen, magnet);
        if f.magnitude() >= config.friction && f.magnitude() > 0.0 {
            *pen += f.direction() * (config.pen_speed * config.dt);
            true
        } else {
            false
        }
    };
    let travel = |from: Vec2, to: Vec2, pen: &mut Vec2| {
        let dist = (to - from).norm();
        let steps = (dist / (config.magnet_speed * config.dt)).ceil().max(1.0) as usize;
        for i in 1..=steps {
            let magnet = from + (to - from) * (i as f64 / steps as f64);
            passive(pen, magnet);
        }
    };

    let mut pen = center;
    let mut offsets = Vec::with_capacity(config.repetitions);
    for _ in 0..config.repetitions {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(config.min_excursion..=config.max_excursion);
        let spot = center + Vec2::new(angle.cos(), angle.sin()) * radius;
        travel(center, spot, &mut pen);
        travel(spot, center, &mut pen);
        let settle = (config.settle_time / config.dt).ceil() as usize;
        for _ in 0..settle {
            if !passive(&mut pen, center) {
                break;
            }
        }
        offsets.push((pen - center).norm());
    }
    let n = offsets.len() as f64;
    let mean = offsets.iter().sum::<f64>() / n;
    let var = offsets.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(DispersionStats {
        offsets,
        mean,
        sd: var.sqrt(),
    })
}

/// Result of one corner sharpness level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureLevel {
    pub turn_deg: f64,
    /// Mean distance from the pen to the path (m).
    pub mean_error: f64,
    pub max_error: f64,
    /// Drawn-to-reference and reference-to-drawn means (m).
    pub hausdorff_like: [f64; 2],
    /// Pen-to-path distance per tick with the pen's progress normalized
    /// by the path length.
    pub series: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureSweep {
    pub levels: usize,
    pub max_turn_deg: f64,
    pub leg_mm: f64,
    pub vertex_mm: [f64; 2],
}

impl Default for CurvatureSweep {
    fn default() -> Self {
        CurvatureSweep {
            levels: 9,
            max_turn_deg: 120.0,
            leg_mm: 60.0,
            vertex_mm: [130.0, 40.0],
        }
    }
}

impl CurvatureSweep {
    /// Turn angles from straight to `max_turn_deg`, evenly spaced.
    pub fn turn_angles(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|i| self.max_turn_deg * i as f64 / (self.levels - 1) as f64)
            .collect()
    }
}

/// Runs `template` on corners of increasing sharpness.
pub fn curvature_sweep(
    sweep: &CurvatureSweep,
    template: &ScenarioConfig,
    ctrl: &ControllerConfig,
) -> Result<Vec<CurvatureLevel>, SimError> {
    if sweep.levels < 2 {
        return Err(SimError::NotPositive("levels - 1"));
    }
    sweep
        .turn_angles()
        .into_iter()
        .map(|turn_deg| {
            let mut cfg = template.clone();
            cfg.shape = ShapeSpec::Corner {
                vertex_mm: sweep.vertex_mm,
                leg_mm: sweep.leg_mm,
                turn_deg,
            };
            cfg.name = format!("{}_corner_{turn_deg:.1}", template.name);
            let path = cfg.shape.build()?;
            let trace = run_on_path(&cfg, ctrl, &path)?;
            let mut hint = None;
            let series: Vec<[f64; 2]> = trace
                .rows
                .iter()
                .map(|r| {
                    let th = path.closest_theta(r.pen(), hint);
                    hint = Some(th);
                    [th / path.length(), (path.eval(th).point - r.pen()).norm()]
                })
                .collect();
            let n = series.len().max(1) as f64;
            let hd = crate::metrics::session_metrics(&trace, &path)
                .map(|m| m.hausdorff_like)
                .unwrap_or([0.0, 0.0]);
            Ok(CurvatureLevel {
                hausdorff_like: hd,
                turn_deg,
                mean_error: series.iter().map(|s| s[1]).sum::<f64>() / n,
                max_error: series.iter().map(|s| s[1]).fold(0.0, f64::max),
                series,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NamedShape {
    pub name: String,
    pub spec: ShapeSpec,
}

/// Parameters of the seeded standard suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub shapes: Vec<NamedShape>,
    /// User speed scale is drawn uniformly from this range per seed (m/s).
    pub v_c_range: [f64; 2],
    pub v_ref: f64,
    pub jitter: f64,
    pub measurement_noise: f64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            shapes: vec![
                NamedShape {
                    name: "sinusoid".into(),
                    spec: ShapeSpec::Sinusoid {
                        start_mm: [25.0, 65.0],
                        length_mm: 180.0,
                        amplitude_mm: 20.0,
                        periods: 1.0,
                    },
                },
                NamedShape {
                    name: "circle".into(),
                    spec: ShapeSpec::Circle {
                        center_mm: [115.0, 65.0],
                        radius_mm: 40.0,
                    },
                },
                NamedShape {
                    name: "corner".into(),
                    spec: ShapeSpec::Corner {
                        vertex_mm: [130.0, 35.0],
                        leg_mm: 70.0,
                        turn_deg: 90.0,
                    },
                },
            ],
            v_c_range: [0.05, 0.15],
            v_ref: 0.2,
            jitter: 2e-4,
            measurement_noise: 1e-4,
            duration: 8.0,
            dt: 0.01,
        }
    }
}

impl SuiteConfig {
    /// Scenarios of one seed: every shape under every strategy, sharing the
    /// drawn user speed.
    pub fn scenarios(&self, seed: u64) -> Vec<ScenarioConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5017e);
        let v_c = rng.random_range(self.v_c_range[0]..=self.v_c_range[1]);
        let mut out = Vec::new();
        for named in &self.shapes {
            for strategy in Strategy::ALL {
                out.push(ScenarioConfig {
                    name: format!("{}_{}_seed{seed}", named.name, strategy.name()),
                    shape: named.spec.clone(),
                    strategy,
                    start_theta: 0.0,
                    initial_offset: [0.0, 0.0],
                    duration: self.duration,
                    seed,
                    dt: self.dt,
                    user: UserParams {
                        v_c,
                        jitter: self.jitter,
                        ..Default::default()
                    },
                    pause: None,
                    v_ref: self.v_ref,
                    measurement_noise: self.measurement_noise,
                    finish_at_end: true,
                    record_timing: false,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn user_step_examples() {
        let p = UserParams::default();
        let dt = 0.01;
        let mut u = SimulatedUser::new(p, Vec2::new(1.0, 0.0)).unwrap();
        let n = u.step(Vec2::zeros(), PlanarForce::ZERO, 0.4, dt, &mut rng());
        assert!((n - Vec2::new(p.v_c * dt, 0.0)).norm() < 1e-15);

        let mut u = SimulatedUser::new(p, Vec2::zeros()).unwrap();
        let n = u.step(Vec2::zeros(), PlanarForce { fx: 0.0, fy: 0.3 }, 0.4, dt, &mut rng());
        assert!((n - Vec2::new(0.0, p.v_c * dt)).norm() < 1e-15);

        let mut u = SimulatedUser::new(p, Vec2::new(1.0, 0.0)).unwrap();
        let n = u.step(Vec2::zeros(), PlanarForce { fx: 0.0, fy: 0.3 }, 0.4, dt, &mut rng());
        assert!((n.norm() - p.v_c * 2f64.sqrt() * dt).abs() < 1e-15);
        assert!((n.x - n.y).abs() < 1e-15);
        assert!((u.velocity.normalize() - n.normalize()).norm() < 1e-12);
    }

    #[test]
    fn force_proportional_mode_scales_the_pull() {
        let p = UserParams {
            compliance: Compliance::ForceProportional,
            ..Default::default()
        };
        let mut u = SimulatedUser::new(p, Vec2::zeros()).unwrap();
        let n = u.step(Vec2::zeros(), PlanarForce { fx: 0.1, fy: 0.0 }, 0.4, 0.01, &mut rng());
        assert!((n.x - 0.25 * p.v_c * 0.01).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_users() {
        let zero = UserParams {
            w_v: 0.0,
            w_m: 0.0,
            ..Default::default()
        };
        assert!(SimulatedUser::new(zero, Vec2::zeros()).is_err());
        let slow = UserParams {
            v_c: 0.0,
            ..Default::default()
        };
        assert_eq!(SimulatedUser::new(slow, Vec2::zeros()), Err(SimError::UserSpeed(0.0)));
    }

    pub(crate) fn scenario(strategy: Strategy) -> ScenarioConfig {
        ScenarioConfig {
            name: "test".into(),
            shape: ShapeSpec::Line {
                start_mm: [30.0, 65.0],
                end_mm: [200.0, 65.0],
            },
            strategy,
            start_theta: 0.02,
            initial_offset: [0.0, 0.0],
            duration: 0.5,
            seed: 1,
            dt: 0.01,
            user: UserParams::default(),
            pause: None,
            v_ref: 0.1,
            measurement_noise: 1e-4,
            finish_at_end: false,
            record_timing: false,
        }
    }

    #[test]
    fn zero_duration_gives_empty_trace() {
        let mut cfg = scenario(Strategy::Mpcc);
        cfg.duration = 0.0;
        let t = run_scenario(&cfg, &ControllerConfig::default()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn runs_are_reproducible() {
        for s in Strategy::ALL {
            let cfg = scenario(s);
            let a = run_scenario(&cfg, &ControllerConfig::default()).unwrap();
            let b = run_scenario(&cfg, &ControllerConfig::default()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 50);
            a.validate().unwrap();
        }
    }

    #[test]
    fn frictionless_dispersion_vanishes() {
        let cfg = DispersionConfig {
            repetitions: 10,
            ..Default::default()
        };
        let stats = dispersion_experiment(&MagnetModel::reference(), &cfg).unwrap();
        assert!(stats.mean < 2e-4, "{}", stats.mean);
    }
}
