use magpen_core::em::{
    actuation_force, actuation_force_tilted, fit_dipole, force_strength_ratio, peak_force_ratio, synthetic_scan,
    FieldSample, MagnetModel, MAX_TILT,
};
use magpen_core::geom::Vec2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::Outcome;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn em_constants() -> Result<Outcome, String> {
    let m = MagnetModel::reference();
    let (e_mp, e_f0) = (rel(m.m_p, 0.683), rel(m.f0, 0.488));
    Ok(Outcome::new(
        e_mp <= 5e-3 && e_f0 <= 5e-3,
        format!(
            "m_p = {:.4} A m^2 ({:.2}% off 0.683), F0 = {:.4} N ({:.2}% off 0.488)",
            m.m_p,
            e_mp * 100.0,
            m.f0,
            e_f0 * 100.0
        ),
    ))
}

fn f0_oracle(u: f64) -> f64 {
    u * (4.0 - u * u) / (1.0 + u * u).powf(3.5)
}

pub fn force_curve() -> Result<Outcome, String> {
    let n = 2_000_000;
    let (mut best_u, mut best) = (0.0, f64::MIN);
    let mut worst_mismatch: f64 = 0.0;
    for i in 0..=n {
        let u = 2.0 * i as f64 / n as f64;
        let o = f0_oracle(u);
        if o > best {
            best = o;
            best_u = u;
        }
        if i % 100 == 0 {
            worst_mismatch = worst_mismatch.max((force_strength_ratio(u) - o).abs());
        }
    }
    let ends = force_strength_ratio(0.0) == 0.0 && force_strength_ratio(2.0) == 0.0;
    let beyond = force_strength_ratio(2.5) == 0.0;
    let lib_peak = peak_force_ratio();
    let passed = (0.913..=0.916).contains(&best)
        && (0.385..=0.395).contains(&best_u)
        && (lib_peak - best).abs() < 1e-9
        && worst_mismatch < 1e-12
        && ends
        && beyond;
    Ok(Outcome::new(
        passed,
        format!(
            "grid max {best:.5} at d/h = {best_u:.4}, library peak {lib_peak:.5}, f0(0) = {}, f0(2) = {}, max deviation {worst_mismatch:.1e}",
            force_strength_ratio(0.0),
            force_strength_ratio(2.0)
        ),
    ))
}

/// Separation on the falling branch of the upright curve at which it
/// reaches `level` (N); `None` when the level exceeds the peak.
fn falling_branch_inverse(model: &MagnetModel, level: f64) -> Option<f64> {
    let peak_d = magpen_core::em::peak_separation_ratio() * model.h;
    let upright = |d: f64| model.f0 * force_strength_ratio(d / model.h);
    if level > upright(peak_d) {
        return None;
    }
    if level <= 0.0 {
        return Some(2.0 * model.h);
    }
    let (mut lo, mut hi) = (peak_d, 2.0 * model.h);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if upright(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

pub fn tilt_bound() -> Result<Outcome, String> {
    let model = MagnetModel::reference();
    let pen = Vec2::new(0.1, 0.06);
    let mut zero_tilt_diff: f64 = 0.0;
    for i in 0..=400 {
        let d = 2.2 * model.h * i as f64 / 400.0;
        let magnet = pen + Vec2::new(d, 0.0);
        let up = actuation_force(&model, 1.0, pen, magnet).to_vec();
        for gamma in [0.0, 1.0, std::f64::consts::PI] {
            let t = actuation_force_tilted(&model, 1.0, pen, magnet, 0.0, gamma)
                .map_err(|e| e.to_string())?
                .to_vec();
            zero_tilt_diff = zero_tilt_diff.max((t - up).norm());
        }
    }

    let peak_d = magpen_core::em::peak_separation_ratio() * model.h;
    let mut worst_shift: f64 = 0.0;
    let mut above_peak = 0usize;
    let mut samples = 0usize;
    let mut worst_gamma = 0.0;
    for gamma in [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI] {
        for i in 1..400 {
            let d = peak_d + (2.0 * model.h - peak_d) * i as f64 / 400.0;
            let magnet = pen + Vec2::new(d, 0.0);
            let f = actuation_force_tilted(&model, 1.0, pen, magnet, MAX_TILT, gamma).map_err(|e| e.to_string())?;
            let level = f.fx;
            samples += 1;
            let shift = match falling_branch_inverse(&model, level) {
                Some(d_up) => (d_up - d).abs(),
                None => {
                    above_peak += 1;
                    f64::INFINITY
                }
            };
            if shift > worst_shift {
                worst_shift = shift;
                worst_gamma = gamma;
            }
        }
    }
    let passed = zero_tilt_diff <= 1e-12 && worst_shift <= 3e-3;
    let shift_text = if worst_shift.is_finite() {
        format!("{:.2} mm", worst_shift * 1e3)
    } else {
        format!("unbounded ({above_peak} of {samples} tilted levels exceed the upright peak)")
    };
    Ok(Outcome::new(
        passed,
        format!(
            "beta = 0 deviation {zero_tilt_diff:.1e} N; beta = 30 deg worst shift {shift_text} at gamma = {worst_gamma:.2} rad"
        ),
    ))
}

const C1: f64 = -1.276e-7;
const C2: f64 = 2.713e-2;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn field_fit() -> Result<Outcome, String> {
    let scan = synthetic_scan(C1, C2, 0.06, 61);
    let clean = fit_dipole(&scan).map_err(|e| e.to_string())?;
    let clean_err = rel(clean.c1, C1).max(rel(clean.c2, C2));

    let peak = scan.iter().map(|s| s.bz.abs()).fold(0.0, f64::max);
    let noise = Normal::new(0.0, 0.01 * peak).map_err(|e| e.to_string())?;
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for seed in 1..=20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<FieldSample> = scan
            .iter()
            .map(|s| FieldSample {
                distance: s.distance,
                bz: s.bz + noise.sample(&mut rng),
            })
            .collect();
        let fit = fit_dipole(&noisy).map_err(|e| format!("seed {seed}: {e}"))?;
        e1.push(rel(fit.c1, C1));
        e2.push(rel(fit.c2, C2));
    }
    let (m1, m2) = (median(e1), median(e2));
    Ok(Outcome::new(
        clean_err <= 1e-3 && m1 <= 0.05 && m2 <= 0.05,
        format!(
            "noiseless error {:.1e}; 1% noise median error C1 {:.2}%, C2 {:.2}% over 20 seeds",
            clean_err,
            m1 * 100.0,
            m2 * 100.0
        ),
    ))
}
