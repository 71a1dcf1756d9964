use magpen_core::dynamics::{AdmissibleSets, ControlInput, SystemState};
use magpen_core::em::MagnetModel;
use magpen_core::geom::Vec2;
use magpen_core::mpcc::{
    solve_problem, stage_cost, stage_cost_gradient, ControllerConfig, CostWeights, HorizonProblem, Progress,
    ProgressRates, SolverOptions, GRAD_DIM, TERM_COUNT, TERM_NAMES,
};
use magpen_core::path::ReferencePath;
use magpen_core::shapes::ShapeSpec;
use magpen_core::sim::{run_scenario, SuiteConfig, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

fn shapes() -> Result<Vec<ReferencePath>, String> {
    [
        ShapeSpec::Line {
            start_mm: [30.0, 60.0],
            end_mm: [200.0, 75.0],
        },
        ShapeSpec::Circle {
            center_mm: [115.0, 65.0],
            radius_mm: 40.0,
        },
        ShapeSpec::Sinusoid {
            start_mm: [25.0, 65.0],
            length_mm: 180.0,
            amplitude_mm: 20.0,
            periods: 1.0,
        },
    ]
    .iter()
    .map(|s| s.build().map_err(|e| e.to_string()))
    .collect()
}

fn unit_disc(rng: &mut ChaCha8Rng, radius: f64) -> Vec2 {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let r = radius * rng.random::<f64>().sqrt();
    Vec2::new(a.cos(), a.sin()) * r
}

struct Point {
    state: SystemState,
    rates: Option<ProgressRates>,
    pen: Vec2,
}

fn with_coordinate(p: &Point, i: usize, delta: f64) -> Point {
    let mut state = p.state.to_array();
    let mut rates = p.rates;
    match i {
        0..=5 => state[i] += delta,
        6 => rates.as_mut().expect("rates present").current += delta,
        _ => rates.as_mut().expect("rates present").previous += delta,
    }
    Point {
        state: SystemState::from_array(state),
        rates,
        pen: p.pen,
    }
}

/// Relative errors are taken against the larger of the term's own gradient
/// and this fraction of the largest gradient entry of the whole stage, so
/// vanishing derivatives are not compared against rounding noise.
const NOISE_FLOOR: f64 = 1e-6;

pub fn gradients() -> Result<Outcome, String> {
    let weights = CostWeights::default();
    let model = MagnetModel::reference();
    let paths = shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ad1);
    let steps = [1e-7, 1e-7, 1e-6, 1e-6, 1e-6, 1e-7, 1e-6, 1e-6];
    let mut worst = [0.0f64; TERM_COUNT];
    let points = 1000;
    for n in 0..points {
        let path = &paths[n % paths.len()];
        let theta = rng.random_range(0.05..0.95) * path.length();
        let pen = path.eval(theta + rng.random_range(-0.01..0.01)).point + unit_disc(&mut rng, 0.01);
        let sep = rng.random_range(0.1..1.8) * model.h;
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let state = SystemState {
            magnet_pos: pen + Vec2::new(dir.cos(), dir.sin()) * sep,
            magnet_vel: unit_disc(&mut rng, 0.1),
            alpha: rng.random_range(0.05..1.0),
            theta,
        };
        let rates = (n % 5 != 0).then(|| ProgressRates {
            current: rng.random_range(0.0..0.3),
            previous: rng.random_range(0.0..0.3),
        });
        let p = Point { state, rates, pen };
        let terms = |q: &Point| stage_cost(&weights, &model, path, &q.state, q.rates, q.pen).terms.as_array();
        let analytic = stage_cost_gradient(&weights, &model, path, &state, rates, pen);
        let dims = if rates.is_some() { GRAD_DIM } else { 6 };
        let mut fd = [[0.0; GRAD_DIM]; TERM_COUNT];
        for i in 0..dims {
            let up = terms(&with_coordinate(&p, i, steps[i]));
            let dn = terms(&with_coordinate(&p, i, -steps[i]));
            for t in 0..TERM_COUNT {
                fd[t][i] = (up[t] - dn[t]) / (2.0 * steps[i]);
            }
        }
        let stage_scale = analytic.terms.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
        for t in 0..TERM_COUNT {
            let scale = analytic.terms[t]
                .iter()
                .chain(&fd[t])
                .fold(NOISE_FLOOR * stage_scale, |a, b| a.max(b.abs()));
            if scale == 0.0 {
                continue;
            }
            let diff = (0..GRAD_DIM).map(|i| (analytic.terms[t][i] - fd[t][i]).abs()).fold(0.0, f64::max);
            worst[t] = worst[t].max(diff / scale);
        }
    }
    let overall = worst.iter().copied().fold(0.0, f64::max);
    let per_term: Vec<String> = TERM_NAMES.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    Ok(Outcome::new(
        overall < 1e-4,
        format!("{points} points, worst relative error per term: {}", per_term.join(", ")),
    ))
}

/// Brute-force minimum of a two-stage problem: a full grid over the box,
/// then repeated grids over a shrinking box around the incumbent.
///
/// The second acceleration only enters the cost through its own penalty,
/// so it is held at zero.
fn grid_minimum(problem: &HorizonProblem, sets: &AdmissibleSets) -> f64 {
    let b = sets.input_bounds();
    let full: [(f64, f64); 6] = [
        (b[0].lo, b[0].hi),
        (b[1].lo, b[1].hi),
        (b[2].lo, b[2].hi),
        (b[3].lo, b[3].hi),
        (b[2].lo, b[2].hi),
        (b[3].lo, b[3].hi),
    ];
    let inputs = |z: &[f64; 6]| {
        [
            ControlInput {
                accel: Vec2::new(z[0], z[1]),
                alpha_rate: z[2],
                theta_rate: z[3],
            },
            ControlInput {
                accel: Vec2::zeros(),
                alpha_rate: z[4],
                theta_rate: z[5],
            },
        ]
    };
    let mut best_z = [0.0; 6];
    let mut best = f64::INFINITY;
    let mut boxes = full;
    for points in [9usize, 7, 7, 7, 7, 7] {
        let grid: Vec<Vec<f64>> = boxes
            .iter()
            .map(|&(lo, hi)| (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect())
            .collect();
        let mut idx = [0usize; 6];
        loop {
            let z: [f64; 6] = std::array::from_fn(|d| grid[d][idx[d]]);
            let c = problem.evaluate(&inputs(&z)).total_cost;
            if c < best {
                best = c;
                best_z = z;
            }
            let mut d = 0;
            while d < 6 {
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == 6 {
                break;
            }
        }
        boxes = std::array::from_fn(|d| {
            let (lo, hi) = boxes[d];
            let cell = (hi - lo) / (points - 1) as f64;
            let (flo, fhi) = full[d];
            ((best_z[d] - 1.5 * cell).max(flo), (best_z[d] + 1.5 * cell).min(fhi))
        });
    }
    best
}

pub fn grid_oracle() -> Result<Outcome, String> {
    let weights = CostWeights {
        horizon: 2,
        ..CostWeights::default()
    };
    let model = MagnetModel::reference();
    let sets = AdmissibleSets::default();
    let paths = shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a1d);
    let dt = 0.01;
    let instances = 50;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut failures = 0;
    for n in 0..instances {
        let path = &paths[n % paths.len()];
        let theta = rng.random_range(0.1..0.9) * path.length();
        let pen0 = path.eval(theta).point + unit_disc(&mut rng, 0.01);
        let pen_vel = unit_disc(&mut rng, 0.1);
        let x0 = SystemState {
            magnet_pos: pen0 + unit_disc(&mut rng, 0.015),
            magnet_vel: unit_disc(&mut rng, 0.05),
            alpha: rng.random_range(0.0..1.0),
            theta,
        };
        let problem = HorizonProblem {
            weights: &weights,
            model: &model,
            path,
            sets: &sets,
            dt,
            x0,
            pen: (0..3).map(|k| pen0 + pen_vel * (k as f64 * dt)).collect(),
            prev_theta_dot: rng.random_range(0.0..0.2),
            progress: Progress::Free,
        };
        let grid = grid_minimum(&problem, &sets);
        let solved = solve_problem(&problem, None, &SolverOptions::default()).total_cost;
        let excess = (solved - grid) / grid.abs();
        worst_excess = worst_excess.max(excess);
        if solved > grid + 0.05 * grid.abs() {
            failures += 1;
        }
    }
    Ok(Outcome::new(
        failures == 0,
        format!(
            "{instances} instances, {failures} above 1.05x the grid minimum; worst solver excess {:+.3}% of |grid|",
            worst_excess * 100.0
        ),
    ))
}

pub fn realtime() -> Result<Outcome, String> {
    let ctrl = ControllerConfig::default();
    let suite = SuiteConfig::default();
    let mut times = Vec::new();
    for seed in 1..=3 {
        for mut sc in suite.scenarios(seed) {
            if sc.strategy != Strategy::Mpcc {
                continue;
            }
            sc.record_timing = true;
            let trace = run_scenario(&sc, &ctrl).map_err(|e| e.to_string())?;
            times.extend(trace.rows.iter().map(|r| r.solve_ms));
        }
    }
    if times.is_empty() {
        return Err("no solves recorded".into());
    }
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let p99 = times[((times.len() - 1) as f64 * 0.99).round() as usize];
    Ok(Outcome::new(
        mean < 10.0 && p99 < 20.0,
        format!(
            "{} solves at N = {}: mean {mean:.2} ms, p99 {p99:.2} ms, max {:.2} ms",
            times.len(),
            ctrl.weights.horizon,
            times[times.len() - 1]
        ),
    ))
}
