//! Contouring controller: stage costs, the horizon problem and its solver.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    kalman_predict, kalman_update, project_input, step_with_mask, AdmissibleSets, ControlInput,
    DynamicsError, Interval, KalmanParams, PenEstimate, SystemState, DEFAULT_DT,
};
use crate::em::{actuation_force_jacobian, MagnetModel, PlanarForce};
use crate::geom::{Mat2, Vec2};
use crate::path::ReferencePath;

/// Desired-force cap as a multiple of `F0`.
pub const DESIRED_FORCE_CAP: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Horizon length `N`.
    pub horizon: usize,
    pub w_l: f64,
    pub w_c: f64,
    pub w_theta: f64,
    pub w_theta_dot: f64,
    pub w_f: f64,
    pub w_d: f64,
    pub w_alpha: f64,
    /// Stiffness of the desired-force spring.
    pub c: f64,
    /// Stage `k` is weighted by `gamma^k`.
    pub gamma: f64,
    /// Diagonal input penalty on `(a_x, a_y, alpha_dot, theta_dot)`.
    pub r: [f64; 4],
    /// Cost length units per meter. Lag, contour, progress and distance
    /// terms measure lengths in these units.
    pub length_scale: f64,
    /// Cost force units per newton, used by the force residual.
    pub force_scale: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            horizon: 10,
            w_l: 1.5,
            w_c: 1.5,
            w_theta: 10.0,
            w_theta_dot: 0.1,
            w_f: 10.0,
            w_d: 0.05,
            w_alpha: 7.0,
            c: 5.0,
            gamma: 0.9,
            r: [1e-3, 1e-3, 1e-2, 1e-3],
            length_scale: 100.0,
            force_scale: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MpccError {
    #[error("weight `{name}` must be positive and finite, got {value}")]
    BadWeight { name: &'static str, value: f64 },
    #[error("horizon must be at least 2, got {0}")]
    ShortHorizon(usize),
    #[error("horizon decay must lie in (0, 1], got {0}")]
    BadDecay(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), MpccError> {
        if self.horizon < 2 {
            return Err(MpccError::ShortHorizon(self.horizon));
        }
        let named = [
            ("w_l", self.w_l),
            ("w_c", self.w_c),
            ("w_theta", self.w_theta),
            ("w_theta_dot", self.w_theta_dot),
            ("w_f", self.w_f),
            ("w_d", self.w_d),
            ("w_alpha", self.w_alpha),
            ("c", self.c),
            ("r[0]", self.r[0]),
            ("r[1]", self.r[1]),
            ("r[2]", self.r[2]),
            ("r[3]", self.r[3]),
            ("length_scale", self.length_scale),
            ("force_scale", self.force_scale),
        ];
        for (name, value) in named {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MpccError::BadWeight { name, value });
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MpccError::BadDecay(self.gamma));
        }
        Ok(())
    }

    fn stage_weight(&self, k: usize) -> f64 {
        self.gamma.powi(k as i32)
    }
}

/// Spring force from the pen toward `target`, capped at `0.9 F0`.
pub fn desired_force(weights: &CostWeights, model: &MagnetModel, pen: Vec2, target: Vec2) -> PlanarForce {
    PlanarForce::from_vec(desired_force_with_jacobian(weights, model, target - pen).0)
}

/// Desired force for `r = target - pen` and its derivative in `r`.
fn desired_force_with_jacobian(weights: &CostWeights, model: &MagnetModel, r: Vec2) -> (Vec2, Mat2) {
    let k = weights.c * model.f0 / model.h;
    let cap = DESIRED_FORCE_CAP * model.f0;
    let dist = r.norm();
    if k * dist <= cap {
        (r * k, Mat2::identity() * k)
    } else {
        let e = r / dist;
        (e * cap, (Mat2::identity() - e * e.transpose()) * (cap / dist))
    }
}

/// Number of cost terms in a stage.
pub const TERM_COUNT: usize = 7;

pub const TERM_NAMES: [&str; TERM_COUNT] = [
    "lag",
    "contour",
    "progress",
    "progress_rate",
    "force",
    "distance",
    "intensity",
];

/// Weighted contributions of each term to `J_k`, in [`TERM_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostTerms {
    pub lag: f64,
    pub contour: f64,
    pub progress: f64,
    pub progress_rate: f64,
    pub force: f64,
    pub distance: f64,
    pub intensity: f64,
}

impl CostTerms {
    pub fn as_array(&self) -> [f64; TERM_COUNT] {
        [
            self.lag,
            self.contour,
            self.progress,
            self.progress_rate,
            self.force,
            self.distance,
            self.intensity,
        ]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// Gradient coordinates: the six state entries, then `theta_dot` of this
/// stage and of the previous one.
pub const GRAD_DIM: usize = 8;
pub const GRAD_THETA_DOT: usize = 6;
pub const GRAD_PREV_THETA_DOT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCost {
    pub total: f64,
    pub terms: CostTerms,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageGradient {
    /// Per-term gradients, in [`TERM_NAMES`] order.
    pub terms: [[f64; GRAD_DIM]; TERM_COUNT],
}

impl StageGradient {
    pub fn total(&self) -> [f64; GRAD_DIM] {
        let mut g = [0.0; GRAD_DIM];
        for term in &self.terms {
            for (a, b) in g.iter_mut().zip(term) {
                *a += b;
            }
        }
        g
    }
}

/// Progress rates entering the smoothness term. `None` at the terminal
/// stage, which has no input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressRates {
    pub current: f64,
    pub previous: f64,
}

/// Stage cost `J_k` with its breakdown.
pub fn stage_cost(
    weights: &CostWeights,
    model: &MagnetModel,
    path: &ReferencePath,
    state: &SystemState,
    rates: Option<ProgressRates>,
    pen: Vec2,
) -> StageCost {
    evaluate_stage(weights, model, path, state, rates, pen, false).0
}

/// Analytic gradient of every term of `J_k`.
pub fn stage_cost_gradient(
    weights: &CostWeights,
    model: &MagnetModel,
    path: &ReferencePath,
    state: &SystemState,
    rates: Option<ProgressRates>,
    pen: Vec2,
) -> StageGradient {
    evaluate_stage(weights, model, path, state, rates, pen, true).1
}

fn evaluate_stage(
    weights: &CostWeights,
    model: &MagnetModel,
    path: &ReferencePath,
    state: &SystemState,
    rates: Option<ProgressRates>,
    pen: Vec2,
    want_gradient: bool,
) -> (StageCost, StageGradient) {
    let s = path.sample(state.theta);
    let r = s.point - pen;
    let lag = r.dot(&s.tangent);
    let c_l = lag * lag;
    let c_c = (r - s.tangent * lag).norm_squared();

    let (f_theta, df_dr) = desired_force_with_jacobian(weights, model, r);
    let fa = actuation_force_jacobian(model, state.alpha, pen, state.magnet_pos);
    let diff = f_theta - fa.force;
    let c_f = diff.norm_squared();
    let sep = state.magnet_pos - pen;
    let c_d = sep.norm_squared();

    let rate_residual = rates.map_or(0.0, |q| q.current - q.previous);

    let ls = weights.length_scale;
    let ls2 = ls * ls;
    let fs2 = weights.force_scale * weights.force_scale;
    let terms = CostTerms {
        lag: weights.w_l * ls2 * c_l,
        contour: weights.w_c * ls2 * c_c,
        progress: -weights.w_theta * ls * state.theta,
        progress_rate: weights.w_theta_dot * ls2 * rate_residual * rate_residual,
        force: weights.w_f * fs2 * c_f,
        distance: weights.w_d * ls2 * c_d,
        intensity: weights.w_alpha * state.alpha * state.alpha,
    };
    let cost = StageCost {
        total: terms.total(),
        terms,
    };

    let mut grad = StageGradient {
        terms: [[0.0; GRAD_DIM]; TERM_COUNT],
    };
    if !want_gradient {
        return (cost, grad);
    }
    const X: usize = 0;
    const Y: usize = 1;
    const ALPHA: usize = 4;
    const THETA: usize = 5;

    // d lag / d theta = s'.n + r.n'
    let dlag = s.d_point.dot(&s.tangent) + r.dot(&s.d_tangent);
    let dcl = 2.0 * lag * dlag;
    grad.terms[0][THETA] = weights.w_l * ls2 * dcl;
    grad.terms[1][THETA] = weights.w_c * ls2 * (2.0 * r.dot(&s.d_point) - dcl);
    grad.terms[2][THETA] = -weights.w_theta * ls;
    if rates.is_some() {
        let g = 2.0 * weights.w_theta_dot * ls2 * rate_residual;
        grad.terms[3][GRAD_THETA_DOT] = g;
        grad.terms[3][GRAD_PREV_THETA_DOT] = -g;
    }
    let wf = weights.w_f * fs2;
    let dmag = fa.d_magnet.transpose() * diff * (-2.0 * wf);
    grad.terms[4][X] = dmag.x;
    grad.terms[4][Y] = dmag.y;
    grad.terms[4][ALPHA] = -2.0 * wf * fa.d_alpha.dot(&diff);
    grad.terms[4][THETA] = 2.0 * wf * (df_dr * s.d_point).dot(&diff);
    grad.terms[5][X] = 2.0 * weights.w_d * ls2 * sep.x;
    grad.terms[5][Y] = 2.0 * weights.w_d * ls2 * sep.y;
    grad.terms[6][ALPHA] = 2.0 * weights.w_alpha * state.alpha;
    (cost, grad)
}

/// How the progress variable evolves over the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Progress {
    /// `theta_dot` is a decision variable.
    Free,
    /// `theta_dot` is held at the given rate.
    Scheduled { rate: f64 },
}

/// One instance of the finite-horizon problem.
#[derive(Debug, Clone)]
pub struct HorizonProblem<'a> {
    pub weights: &'a CostWeights,
    pub model: &'a MagnetModel,
    pub path: &'a ReferencePath,
    pub sets: &'a AdmissibleSets,
    pub dt: f64,
    pub x0: SystemState,
    /// Predicted pen positions for stages `0..=N`.
    pub pen: Vec<Vec2>,
    /// Progress rate applied on the previous tick.
    pub prev_theta_dot: f64,
    pub progress: Progress,
}

/// States, per-stage costs and total cost of one input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<SystemState>,
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
}

impl HorizonProblem<'_> {
    pub fn horizon(&self) -> usize {
        self.pen.len() - 1
    }

    fn rates(&self, inputs: &[ControlInput], k: usize) -> Option<ProgressRates> {
        (k < inputs.len()).then(|| ProgressRates {
            current: inputs[k].theta_rate,
            previous: if k == 0 {
                self.prev_theta_dot
            } else {
                inputs[k - 1].theta_rate
            },
        })
    }

    fn input_penalty(&self, u: &ControlInput) -> f64 {
        let a = u.to_array();
        (0..4).map(|i| self.weights.r[i] * a[i] * a[i]).sum()
    }

    /// Inputs the solver may actually apply: projected into the input box,
    /// with the scheduled rate substituted when progress is not free.
    pub fn admissible_input(&self, u: &ControlInput) -> ControlInput {
        let mut u = project_input(u, self.sets);
        if let Progress::Scheduled { rate } = self.progress {
            u.theta_rate = rate;
        }
        u
    }

    /// Total cost `sum_k gamma^k (J_k + u_k' R u_k)`; no input at stage `N`.
    pub fn evaluate(&self, inputs: &[ControlInput]) -> Rollout {
        assert_eq!(inputs.len(), self.horizon());
        let bounds = self.sets.state_bounds(self.path.length());
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut stage_costs = Vec::with_capacity(inputs.len() + 1);
        let mut x = self.x0;
        let mut total = 0.0;
        for k in 0..=inputs.len() {
            let mut j = stage_cost(
                self.weights,
                self.model,
                self.path,
                &x,
                self.rates(inputs, k),
                self.pen[k],
            )
            .total;
            if k < inputs.len() {
                j += self.input_penalty(&inputs[k]);
            }
            let wj = self.weights.stage_weight(k) * j;
            stage_costs.push(wj);
            total += wj;
            states.push(x);
            if k < inputs.len() {
                x = step_with_mask(&x, &inputs[k], self.dt, &bounds).0;
            }
        }
        Rollout {
            states,
            stage_costs,
            total_cost: total,
        }
    }

    /// Total cost and its gradient with respect to every input, by the
    /// adjoint recursion. Clamped state components block the gradient.
    pub fn cost_and_gradient(&self, inputs: &[ControlInput]) -> (f64, Vec<[f64; 4]>) {
        let n = self.horizon();
        assert_eq!(inputs.len(), n);
        let bounds = self.sets.state_bounds(self.path.length());
        let mut states = Vec::with_capacity(n + 1);
        let mut masks = Vec::with_capacity(n);
        let mut x = self.x0;
        states.push(x);
        for u in inputs {
            let (next, mask) = step_with_mask(&x, u, self.dt, &bounds);
            masks.push(mask);
            x = next;
            states.push(x);
        }

        let mut total = 0.0;
        let mut stage_grads = Vec::with_capacity(n + 1);
        for (k, xk) in states.iter().enumerate() {
            let (c, g) = evaluate_stage(
                self.weights,
                self.model,
                self.path,
                xk,
                self.rates(inputs, k),
                self.pen[k],
                true,
            );
            let w = self.weights.stage_weight(k);
            let mut j = c.total;
            if k < n {
                j += self.input_penalty(&inputs[k]);
            }
            total += w * j;
            let mut gt = g.total();
            for v in gt.iter_mut() {
                *v *= w;
            }
            stage_grads.push(gt);
        }

        let dt = self.dt;
        let mut grads = vec![[0.0; 4]; n];
        let mut lambda: [f64; 6] = std::array::from_fn(|i| stage_grads[n][i]);
        for k in (0..n).rev() {
            let mask = &masks[k];
            let mu: [f64; 6] = std::array::from_fn(|i| if mask[i] { 0.0 } else { lambda[i] });
            let w = self.weights.stage_weight(k);
            let u = inputs[k].to_array();
            let mut g = [
                mu[2] * dt,
                mu[3] * dt,
                mu[4] * dt,
                mu[5] * dt + stage_grads[k][GRAD_THETA_DOT],
            ];
            if k + 1 < n {
                g[3] += stage_grads[k + 1][GRAD_PREV_THETA_DOT];
            }
            for i in 0..4 {
                g[i] += w * 2.0 * self.weights.r[i] * u[i];
            }
            grads[k] = g;
            let sg = &stage_grads[k];
            lambda = [
                sg[0] + mu[0],
                sg[1] + mu[1],
                sg[2] + mu[0] * dt + mu[2],
                sg[3] + mu[1] * dt + mu[3],
                sg[4] + mu[4],
                sg[5] + mu[5],
            ];
        }
        if let Progress::Scheduled { .. } = self.progress {
            for g in grads.iter_mut() {
                g[3] = 0.0;
            }
        }
        (total, grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Converged when the scaled projected gradient falls below this.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 40,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub states: Vec<SystemState>,
    pub inputs: Vec<ControlInput>,
    /// Weighted stage costs, summing to `total_cost`.
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
    pub iterations: usize,
    /// Wall-clock solve time (s).
    pub solve_time: f64,
    pub converged: bool,
}

impl HorizonSolution {
    /// Inputs shifted by one stage, repeating the last, for the next warm start.
    pub fn shifted_inputs(&self) -> Vec<ControlInput> {
        let mut v: Vec<ControlInput> = self.inputs.iter().skip(1).copied().collect();
        if let Some(last) = self.inputs.last() {
            v.push(*last);
        }
        v
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Projected gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking. Variables are scaled by the half-widths of the input box.
pub fn solve_problem(
    problem: &HorizonProblem,
    warm: Option<&[ControlInput]>,
    options: &SolverOptions,
) -> HorizonSolution {
    let started = Instant::now();
    let n = problem.horizon();
    let bounds = problem.sets.input_bounds();
    let scale: [f64; 4] = std::array::from_fn(|i| 0.5 * bounds[i].width());
    let free = |i: usize| i < 3 || problem.progress == Progress::Free;

    let mut u: Vec<ControlInput> = match warm {
        Some(w) if w.len() == n => w.iter().map(|x| problem.admissible_input(x)).collect(),
        _ => vec![problem.admissible_input(&ControlInput::default()); n],
    };
    let (mut cost, mut grad) = problem.cost_and_gradient(&u);
    let mut step_len = f64::NAN;
    let mut prev: Option<(Vec<[f64; 4]>, Vec<[f64; 4]>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    let to_z = |u: &[ControlInput]| -> Vec<[f64; 4]> {
        u.iter()
            .map(|x| {
                let a = x.to_array();
                std::array::from_fn(|i| a[i] / scale[i])
            })
            .collect()
    };
    let scaled_grad = |g: &[[f64; 4]]| -> Vec<[f64; 4]> {
        g.iter()
            .map(|x| std::array::from_fn(|i| if free(i) { x[i] * scale[i] } else { 0.0 }))
            .collect()
    };
    let project_z = |z: f64, i: usize| -> f64 {
        let b: Interval = bounds[i];
        z.clamp(b.lo / scale[i], b.hi / scale[i])
    };

    while iterations < options.max_iterations {
        let z = to_z(&u);
        let gz = scaled_grad(&grad);
        let pg = z
            .iter()
            .zip(&gz)
            .flat_map(|(zk, gk)| (0..4).map(move |i| (zk[i], gk[i], i)))
            .map(|(zi, gi, i)| (zi - project_z(zi - gi, i)).abs())
            .fold(0.0, f64::max);
        if pg < options.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        if let Some((pz, pgz)) = &prev {
            let (mut ss, mut sy) = (0.0, 0.0);
            for k in 0..n {
                for i in 0..4 {
                    let s = z[k][i] - pz[k][i];
                    ss += s * s;
                    sy += s * (gz[k][i] - pgz[k][i]);
                }
            }
            if sy > 0.0 && ss > 0.0 {
                step_len = ss / sy;
            } else {
                step_len *= 2.0;
            }
        }
        if !step_len.is_finite() || step_len <= 0.0 {
            let gmax = gz.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
            step_len = 0.1 / gmax.max(1e-12);
        }
        step_len = step_len.clamp(1e-12, 1e12);

        let mut accepted = None;
        let mut t = step_len;
        for _ in 0..MAX_BACKTRACKS {
            let mut decrease = 0.0;
            let trial: Vec<ControlInput> = (0..n)
                .map(|k| {
                    let a: [f64; 4] = std::array::from_fn(|i| {
                        let zi = project_z(z[k][i] - t * gz[k][i], i);
                        decrease += gz[k][i] * (zi - z[k][i]);
                        zi * scale[i]
                    });
                    problem.admissible_input(&ControlInput::from_array(a))
                })
                .collect();
            let (c, g) = problem.cost_and_gradient(&trial);
            if c <= cost + ARMIJO * decrease {
                accepted = Some((trial, c, g, t));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, c, g, t)) => {
                prev = Some((z, gz));
                let stalled = (cost - c).abs() <= 1e-15 * cost.abs().max(1.0);
                u = trial;
                cost = c;
                grad = g;
                step_len = t;
                if stalled {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent at any trial length: numerically stationary.
                converged = true;
                break;
            }
        }
    }

    let rollout = problem.evaluate(&u);
    HorizonSolution {
        states: rollout.states,
        inputs: u,
        stage_costs: rollout.stage_costs,
        total_cost: rollout.total_cost,
        iterations,
        solve_time: started.elapsed().as_secs_f64(),
        converged,
    }
}

/// Pen positions for stages `0..=n` from a filter estimate.
pub fn pen_predictions(est: &PenEstimate, n: usize, dt: f64) -> Vec<Vec2> {
    let mut pen = Vec::with_capacity(n + 1);
    pen.push(est.position);
    pen.extend(kalman_predict(est, n, dt));
    pen
}

/// Solves the free-progress problem from `x0` for the pen estimate.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    weights: &CostWeights,
    model: &MagnetModel,
    path: &ReferencePath,
    sets: &AdmissibleSets,
    x0: SystemState,
    pen_est: &PenEstimate,
    prev_theta_dot: f64,
    warm: Option<&HorizonSolution>,
) -> HorizonSolution {
    let problem = HorizonProblem {
        weights,
        model,
        path,
        sets,
        dt: DEFAULT_DT,
        x0,
        pen: pen_predictions(pen_est, weights.horizon, DEFAULT_DT),
        prev_theta_dot,
        progress: Progress::Free,
    };
    let warm_inputs = warm.map(|w| w.inputs.clone());
    solve_problem(&problem, warm_inputs.as_deref(), &SolverOptions::default())
}

/// Static configuration of a controller session.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub weights: CostWeights,
    pub model: MagnetModel,
    pub sets: AdmissibleSets,
    pub kalman: KalmanParams,
    pub solver: SolverOptions,
    pub dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            weights: CostWeights::default(),
            model: MagnetModel::reference(),
            sets: AdmissibleSets::default(),
            kalman: KalmanParams::default(),
            solver: SolverOptions::default(),
            dt: DEFAULT_DT,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), MpccError> {
        self.weights.validate()?;
        self.sets.validate()?;
        if !(self.dt > 0.0) {
            return Err(DynamicsError::BadTimeStep(self.dt).into());
        }
        Ok(())
    }
}

/// Per-tick record of what the controller saw and decided.
#[derive(Debug, Clone, PartialEq)]
pub struct TickDiagnostics {
    pub measurement: Vec2,
    /// The raw measurement lay outside the workspace and was clamped.
    pub measurement_clamped: bool,
    pub estimate: Vec2,
    pub theta_hat: f64,
    pub total_cost: f64,
    /// Unweighted-by-decay breakdown of the stage-1 cost.
    pub terms: CostTerms,
    pub iterations: usize,
    pub converged: bool,
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub input: ControlInput,
    /// Stage state after applying `input`.
    pub state: SystemState,
    pub diagnostics: TickDiagnostics,
}

/// Which progress law a [`Controller`] follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProgressLaw {
    /// Progress is optimized (contouring control).
    Contouring,
    /// Setpoint advances at `v_ref` from `start` (timed MPC).
    Timed { v_ref: f64, start: f64 },
}

/// Receding-horizon controller session: filter, progress estimate, stage
/// state and warm start.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    path: ReferencePath,
    law: ProgressLaw,
    state: SystemState,
    estimate: Option<PenEstimate>,
    theta_hat: Option<f64>,
    last_theta_dot: f64,
    warm: Option<Vec<ControlInput>>,
    last_t: Option<f64>,
}

impl Controller {
    pub fn new(
        config: ControllerConfig,
        path: ReferencePath,
        law: ProgressLaw,
        initial: SystemState,
    ) -> Result<Self, MpccError> {
        config.validate()?;
        let state = config.sets.project_state(&initial, path.length());
        Ok(Controller {
            config,
            path,
            law,
            state,
            estimate: None,
            theta_hat: None,
            last_theta_dot: 0.0,
            warm: None,
            last_t: None,
        })
    }

    pub fn mpcc(config: ControllerConfig, path: ReferencePath, initial: SystemState) -> Result<Self, MpccError> {
        Self::new(config, path, ProgressLaw::Contouring, initial)
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn path(&self) -> &ReferencePath {
        &self.path
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn estimate(&self) -> Option<&PenEstimate> {
        self.estimate.as_ref()
    }

    pub fn theta_hat(&self) -> Option<f64> {
        self.theta_hat
    }

    /// One closed-loop tick: filter the measurement, re-project the
    /// progress, solve the horizon and apply the first input.
    pub fn control_tick(&mut self, measurement: Vec2, t: f64) -> TickOutput {
        let cfg = &self.config;
        let clamped = cfg.sets.workspace.clamp(measurement);
        let measurement_clamped = clamped != measurement;
        let estimate = match (&self.estimate, self.last_t) {
            (Some(est), Some(t_prev)) if t > t_prev => {
                kalman_update(est, clamped, t - t_prev, &cfg.kalman)
                    .unwrap_or_else(|_| PenEstimate::initialize(clamped, &cfg.kalman))
            }
            (Some(est), _) => *est,
            (None, _) => PenEstimate::initialize(clamped, &cfg.kalman),
        };
        self.estimate = Some(estimate);
        self.last_t = Some(t);

        let length = self.path.length();
        let (theta0, progress) = match self.law {
            ProgressLaw::Contouring => {
                let th = self.path.closest_theta(estimate.position, self.theta_hat);
                (th, Progress::Free)
            }
            ProgressLaw::Timed { v_ref, start } => {
                let th = (v_ref * (t - start).max(0.0)).min(length);
                let rate = cfg.sets.theta_rate.clamp(v_ref);
                (th, Progress::Scheduled { rate })
            }
        };
        self.theta_hat = Some(theta0);
        let x0 = SystemState {
            theta: theta0,
            ..self.state
        };
        let problem = HorizonProblem {
            weights: &cfg.weights,
            model: &cfg.model,
            path: &self.path,
            sets: &cfg.sets,
            dt: cfg.dt,
            x0,
            pen: pen_predictions(&estimate, cfg.weights.horizon, cfg.dt),
            prev_theta_dot: self.last_theta_dot,
            progress,
        };
        let sol = solve_problem(&problem, self.warm.as_deref(), &cfg.solver);
        let input = sol.inputs[0];
        let next = sol.states[1];
        let terms = stage_cost(
            &cfg.weights,
            &cfg.model,
            &self.path,
            &next,
            sol.inputs.get(1).map(|u| ProgressRates {
                current: u.theta_rate,
                previous: input.theta_rate,
            }),
            problem.pen[1],
        )
        .terms;

        self.warm = Some(sol.shifted_inputs());
        self.last_theta_dot = input.theta_rate;
        self.state = next;
        TickOutput {
            input,
            state: next,
            diagnostics: TickDiagnostics {
                measurement,
                measurement_clamped,
                estimate: estimate.position,
                theta_hat: theta0,
                total_cost: sol.total_cost,
                terms,
                iterations: sol.iterations,
                converged: sol.converged,
                solve_time: sol.solve_time,
            },
        }
    }
}
