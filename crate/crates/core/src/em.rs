//! Electromagnet to pen force model.
//!
//! Both magnets are treated as point dipoles. Under the upright-pen
//! approximation the in-plane pull depends only on the separation `d`
//! between the pen tip and the projected electromagnet center:
//!
//! ```text
//! F_a = alpha * F0 * f0(d / h) * e_d,      f0(u) = u (4 - u^2) / (1 + u^2)^(7/2)
//! ```
//!
//! with `e_d` pointing from the pen toward the magnet. `f0` is clamped to
//! zero for `u >= 2`, where the dipole expression turns repulsive.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geom::{Mat2, Vec2};

/// Vacuum permeability in H/m.
pub const MU0: f64 = 4.0e-7 * PI;

/// Largest tilt accepted by the angle-aware model (30 degrees).
pub const MAX_TILT: f64 = PI / 6.0;

/// Separation ratio beyond which the model produces no attraction.
pub const ATTRACTION_CUTOFF: f64 = 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmError {
    #[error("magnet parameter `{name}` must be finite and strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("pen tilt {beta} rad is outside the model range of +/-{max} rad")]
    TiltOutOfRange { beta: f64, max: f64 },
}

/// Raw physical inputs from which a [`MagnetModel`] is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MagnetParams {
    /// Vacuum permeability (H/m).
    pub mu0: f64,
    /// Residual magnetization of the pen magnet (T).
    pub br: f64,
    /// Pen magnet volume (m^3).
    pub volume: f64,
    /// Electromagnet dipole strength at full power (A m^2).
    pub m_m: f64,
    /// Vertical separation of the two dipoles (m).
    pub h: f64,
    /// Height of the pen magnet above the pen tip (m).
    pub h_p: f64,
}

impl Default for MagnetParams {
    /// Hardware values of the reference setup: N42 ring magnet in the pen,
    /// 11 W electromagnet.
    fn default() -> Self {
        MagnetParams {
            mu0: MU0,
            br: 1.3,
            volume: 0.66e-6,
            m_m: 1.286,
            h: 0.0271,
            h_p: 0.0140,
        }
    }
}

/// Electromagnet/pen dipole pair with derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetModel {
    pub mu0: f64,
    pub br: f64,
    pub volume: f64,
    /// Pen dipole, `br * volume / mu0`.
    pub m_p: f64,
    pub m_m: f64,
    pub h: f64,
    pub h_p: f64,
    /// Force scale `3 mu0 m_p m_m / (4 pi h^4)` (N).
    pub f0: f64,
}

impl MagnetModel {
    pub fn new(params: MagnetParams) -> Result<Self, EmError> {
        let checks = [
            ("mu0", params.mu0),
            ("br", params.br),
            ("volume", params.volume),
            ("m_m", params.m_m),
            ("h", params.h),
            ("h_p", params.h_p),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(EmError::NonPositive { name, value });
            }
        }
        let m_p = params.br * params.volume / params.mu0;
        let f0 = 3.0 * params.mu0 * m_p * params.m_m / (4.0 * PI * params.h.powi(4));
        Ok(MagnetModel {
            mu0: params.mu0,
            br: params.br,
            volume: params.volume,
            m_p,
            m_m: params.m_m,
            h: params.h,
            h_p: params.h_p,
            f0,
        })
    }

    /// Model built from the reference hardware values.
    pub fn reference() -> Self {
        MagnetModel::new(MagnetParams::default()).expect("reference parameters are valid")
    }

    pub fn params(&self) -> MagnetParams {
        MagnetParams {
            mu0: self.mu0,
            br: self.br,
            volume: self.volume,
            m_m: self.m_m,
            h: self.h,
            h_p: self.h_p,
        }
    }

    /// Largest in-plane force the magnet can exert at full power (N).
    pub fn peak_force(&self) -> f64 {
        self.f0 * peak_force_ratio()
    }

    /// Separation beyond which the pull vanishes (m).
    pub fn attraction_range(&self) -> f64 {
        ATTRACTION_CUTOFF * self.h
    }

    /// Fit constants `(C1, C2)` of the vertical field this electromagnet
    /// produces at pen-magnet height when driven at `alpha`.
    pub fn field_constants(&self, alpha: f64) -> (f64, f64) {
        (self.mu0 * alpha * self.m_m / (4.0 * PI), self.h)
    }

    /// Vertical field at in-plane distance `ds` from the electromagnet axis.
    pub fn field_bz(&self, alpha: f64, ds: f64) -> f64 {
        let (c1, c2) = self.field_constants(alpha);
        dipole_field_bz(c1, c2, ds)
    }
}

/// In-plane force on the pen magnet (N).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarForce {
    pub fx: f64,
    pub fy: f64,
}

impl PlanarForce {
    pub const ZERO: PlanarForce = PlanarForce { fx: 0.0, fy: 0.0 };

    pub fn from_vec(v: Vec2) -> Self {
        PlanarForce { fx: v.x, fy: v.y }
    }

    pub fn to_vec(self) -> Vec2 {
        Vec2::new(self.fx, self.fy)
    }

    pub fn magnitude(self) -> f64 {
        self.fx.hypot(self.fy)
    }

    /// Unit direction of the force, zero for a vanishing force.
    pub fn direction(self) -> Vec2 {
        crate::geom::unit_or_zero(self.to_vec())
    }
}

/// `(4 - u^2) / (1 + u^2)^(7/2)`, i.e. `f0(u) / u`. Smooth at the origin,
/// which keeps the force Jacobian well defined when the magnets align.
fn radial_profile(u: f64) -> f64 {
    if u >= ATTRACTION_CUTOFF {
        return 0.0;
    }
    let s = 1.0 + u * u;
    (4.0 - u * u) / (s * s * s * s.sqrt())
}

/// `psi'(u) / u` for the radial profile above.
fn radial_profile_slope_over_u(u: f64) -> f64 {
    if u >= ATTRACTION_CUTOFF {
        return 0.0;
    }
    let s = 1.0 + u * u;
    let s35 = s * s * s * s.sqrt();
    -2.0 / s35 - 7.0 * (4.0 - u * u) / (s35 * s)
}

/// Dimensionless force strength `f0(d/h)`, zero at both ends of `[0, 2]` and
/// clamped to zero beyond.
pub fn force_strength_ratio(d_over_h: f64) -> f64 {
    d_over_h * radial_profile(d_over_h)
}

/// Location of the force maximum, root of `4u^4 - 27u^2 + 4 = 0` on `(0, 2)`.
pub fn peak_separation_ratio() -> f64 {
    ((27.0 - 665f64.sqrt()) / 8.0).sqrt()
}

/// Maximum of `f0`, roughly 0.9136.
pub fn peak_force_ratio() -> f64 {
    force_strength_ratio(peak_separation_ratio())
}

/// First-order tilt correction `f1(d/h)` of the angle-aware model.
pub fn tilt_correction_ratio(model: &MagnetModel, d_over_h: f64) -> f64 {
    let a = model.h_p / model.h;
    let u2 = d_over_h * d_over_h;
    let s = 1.0 + u2;
    let s25 = s * s * s.sqrt();
    let s35 = s25 * s;
    let s45 = s35 * s;
    (1.0 + a) / s25 + 5.0 * (a + u2) / s35 - 5.0 * a * u2 / s45
}

/// Pull of the electromagnet on an upright pen.
///
/// `alpha` is the electromagnet duty in `[0, 1]`. The force points from the
/// pen toward the magnet; it is zero when both coincide and for
/// separations of `2h` or more.
pub fn actuation_force(model: &MagnetModel, alpha: f64, pen: Vec2, magnet: Vec2) -> PlanarForce {
    let r = magnet - pen;
    let u = r.norm() / model.h;
    PlanarForce::from_vec(r * (alpha * model.f0 * radial_profile(u) / model.h))
}

/// Actuation force together with its derivatives.
#[derive(Debug, Clone, Copy)]
pub struct ForceJacobian {
    pub force: Vec2,
    /// d force / d magnet position. The pen derivative is its negation.
    pub d_magnet: Mat2,
    /// d force / d alpha.
    pub d_alpha: Vec2,
}

pub fn actuation_force_jacobian(
    model: &MagnetModel,
    alpha: f64,
    pen: Vec2,
    magnet: Vec2,
) -> ForceJacobian {
    let r = magnet - pen;
    let u = r.norm() / model.h;
    let scale = model.f0 / model.h;
    let psi = radial_profile(u);
    let slope = radial_profile_slope_over_u(u) / (model.h * model.h);
    let unit_alpha = r * (scale * psi);
    let d_magnet = (Mat2::identity() * psi + r * r.transpose() * slope) * (alpha * scale);
    ForceJacobian {
        force: unit_alpha * alpha,
        d_magnet,
        d_alpha: unit_alpha,
    }
}

/// Angle-aware pull on a pen tilted by `beta` (rad) at azimuth `gamma` (rad)
/// relative to the pen-to-magnet direction.
///
/// Keeps the first-order tilt term: `alpha F0 [f0(d) + beta cos(gamma) f1(d)] e_d`.
/// Valid for `|beta| <= 30 deg`; outside that range an error is returned.
pub fn actuation_force_tilted(
    model: &MagnetModel,
    alpha: f64,
    pen: Vec2,
    magnet: Vec2,
    beta: f64,
    gamma: f64,
) -> Result<PlanarForce, EmError> {
    if !(beta.abs() <= MAX_TILT + 1e-12) {
        return Err(EmError::TiltOutOfRange {
            beta,
            max: MAX_TILT,
        });
    }
    let r = magnet - pen;
    let d = r.norm();
    let u = d / model.h;
    if d == 0.0 || u >= ATTRACTION_CUTOFF {
        return Ok(PlanarForce::ZERO);
    }
    if beta == 0.0 {
        return Ok(actuation_force(model, alpha, pen, magnet));
    }
    let ratio = force_strength_ratio(u) + beta * gamma.cos() * tilt_correction_ratio(model, u);
    Ok(PlanarForce::from_vec(r * (alpha * model.f0 * ratio / d)))
}

/// Vertical dipole field `C1 (2 C2^2 - ds^2) / (ds^2 + C2^2)^(5/2)` (T).
pub fn dipole_field_bz(c1: f64, c2: f64, ds: f64) -> f64 {
    let s = ds * ds + c2 * c2;
    c1 * (2.0 * c2 * c2 - ds * ds) / (s * s * s.sqrt())
}

/// One hall-sensor reading of a field scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    /// In-plane distance between sensor and electromagnet axis (m).
    pub distance: f64,
    /// Vertical flux density (T).
    pub bz: f64,
}

/// Least-squares estimate of the dipole field constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldFit {
    /// Field amplitude (T m^3). Its sign is the sensor polarity.
    pub c1: f64,
    /// Vertical dipole separation (m).
    pub c2: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

impl FieldFit {
    pub fn bz(&self, ds: f64) -> f64 {
        dipole_field_bz(self.c1, self.c2, ds)
    }

    /// Full-power electromagnet dipole `|C1| 4 pi / mu0` (A m^2).
    pub fn electromagnet_dipole(&self, mu0: f64) -> f64 {
        self.c1.abs() * 4.0 * PI / mu0
    }

    /// Vertical separation `h` (m).
    pub fn separation(&self) -> f64 {
        self.c2
    }

    /// `+1` or `-1`: orientation of the sensor relative to the dipole.
    pub fn polarity(&self) -> f64 {
        if self.c1 < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FitError {
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("sample distances must not all be identical")]
    DegenerateDistances,
    #[error("sample {index} is not finite or has a negative distance")]
    InvalidSample { index: usize },
    #[error("fit did not converge after {} iterations (rms residual {})", best.iterations, best.rms_residual)]
    NotConverged { best: FieldFit },
}

pub const FIT_MIN_SAMPLES: usize = 8;
pub const FIT_MAX_ITERATIONS: usize = 200;
const FIT_REL_TOL: f64 = 1e-10;

fn field_shape(c2: f64, ds: f64) -> f64 {
    dipole_field_bz(1.0, c2, ds)
}

fn field_shape_d_c2(c2: f64, ds: f64) -> f64 {
    let s = ds * ds + c2 * c2;
    let n = 2.0 * c2 * c2 - ds * ds;
    c2 * (4.0 * s - 5.0 * n) / (s * s * s * s.sqrt())
}

/// Best amplitude for a fixed `c2` and the resulting sum of squares.
fn profile_amplitude(samples: &[FieldSample], c2: f64) -> (f64, f64) {
    let (mut gy, mut gg) = (0.0, 0.0);
    for s in samples {
        let g = field_shape(c2, s.distance);
        gy += g * s.bz;
        gg += g * g;
    }
    let c1 = if gg > 0.0 { gy / gg } else { 0.0 };
    (c1, sum_sq(samples, c1, c2))
}

fn sum_sq(samples: &[FieldSample], c1: f64, c2: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let r = dipole_field_bz(c1, c2, s.distance) - s.bz;
            r * r
        })
        .sum()
}

/// Fits `(C1, C2)` to a radial field scan.
///
/// A coarse logarithmic scan over `C2` (with the amplitude solved in closed
/// form at each node) seeds a Levenberg-damped Gauss-Newton refinement.
/// Seeding from the profiled amplitude settles the sign of `C1` before the
/// nonlinear stage starts.
pub fn fit_dipole(samples: &[FieldSample]) -> Result<FieldFit, FitError> {
    if samples.len() < FIT_MIN_SAMPLES {
        return Err(FitError::TooFewSamples {
            min: FIT_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    for (index, s) in samples.iter().enumerate() {
        if !(s.distance.is_finite() && s.bz.is_finite() && s.distance >= 0.0) {
            return Err(FitError::InvalidSample { index });
        }
    }
    let first = samples[0].distance;
    if samples.iter().all(|s| s.distance == first) {
        return Err(FitError::DegenerateDistances);
    }

    // 1 mm .. 300 mm
    let nodes = 240;
    let (lo, hi) = (1e-3f64.ln(), 0.3f64.ln());
    let mut c2 = 0.0;
    let mut c1 = 0.0;
    let mut best = f64::INFINITY;
    for i in 0..nodes {
        let cand = (lo + (hi - lo) * i as f64 / (nodes - 1) as f64).exp();
        let (a, sse) = profile_amplitude(samples, cand);
        if sse < best {
            best = sse;
            c1 = a;
            c2 = cand;
        }
    }

    let n = samples.len() as f64;
    let scale_sq: f64 = samples.iter().map(|s| s.bz * s.bz).sum();
    let mut sse = best;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        if sse <= 1e-28 * scale_sq.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        // Normal equations of the 2-parameter problem.
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in samples {
            let g = field_shape(c2, s.distance);
            let j1 = g;
            let j2 = c1 * field_shape_d_c2(c2, s.distance);
            let r = c1 * g - s.bz;
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            b1 -= j1 * r;
            b2 -= j2 * r;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let m11 = a11 * (1.0 + lambda);
            let m22 = a22 * (1.0 + lambda);
            let det = m11 * m22 - a12 * a12;
            if det.is_finite() && det > 0.0 {
                let d1 = (b1 * m22 - a12 * b2) / det;
                let d2 = (m11 * b2 - a12 * b1) / det;
                let (n1, n2) = (c1 + d1, c2 + d2);
                if n2 > 0.0 {
                    let cand = sum_sq(samples, n1, n2);
                    if cand <= sse {
                        let change = sse - cand;
                        c1 = n1;
                        c2 = n2;
                        let prev = sse;
                        sse = cand;
                        lambda = (lambda / 3.0).max(1e-12);
                        accepted = true;
                        if change <= FIT_REL_TOL * prev {
                            converged = true;
                        }
                        break;
                    }
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No damped step improves the residual: stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let fit = FieldFit {
        c1,
        c2,
        rms_residual: (sse / n).sqrt(),
        iterations,
    };
    if converged {
        Ok(fit)
    } else {
        Err(FitError::NotConverged { best: fit })
    }
}

/// Noise-free samples of a dipole field at evenly spaced distances.
pub fn synthetic_scan(c1: f64, c2: f64, max_distance: f64, count: usize) -> Vec<FieldSample> {
    let last = count.saturating_sub(1).max(1) as f64;
    (0..count)
        .map(|i| {
            let distance = max_distance * i as f64 / last;
            FieldSample {
                distance,
                bz: dipole_field_bz(c1, c2, distance),
            }
        })
        .collect()
}
