//! Accuracy and guidance metrics.

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::path::ReferencePath;
use crate::trace::SessionTrace;

/// Default resampling step of [`hausdorff_like`] (m).
pub const DEFAULT_STEP: f64 = 0.5e-3;

/// Pen-to-magnet distance counted by [`MetricsReport::frac_em_beyond_15mm`].
pub const EM_FAR_THRESHOLD: f64 = 0.015;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline has zero length")]
    ZeroLength,
    #[error("resampling step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("trace is empty")]
    EmptyTrace,
}

fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Points every `step` of arc length along `polyline`, plus its last point.
pub fn resample_equidistant(polyline: &[Vec2], step: f64) -> Result<Vec<Vec2>, MetricsError> {
    if polyline.len() < 2 {
        return Err(MetricsError::TooFewPoints(polyline.len()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(MetricsError::BadStep(step));
    }
    let total = polyline_length(polyline);
    if total <= 0.0 {
        return Err(MetricsError::ZeroLength);
    }
    let tol = 1e-9;
    let count = ((total + tol) / step).floor() as usize;
    let mut out = Vec::with_capacity(count + 2);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..=count {
        let target = (k as f64 * step).min(total);
        loop {
            let len = (polyline[seg + 1] - polyline[seg]).norm();
            if target <= seg_start + len || seg + 2 == polyline.len() {
                let u = if len > 0.0 {
                    ((target - seg_start) / len).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                out.push(polyline[seg] + (polyline[seg + 1] - polyline[seg]) * u);
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    let last = polyline[polyline.len() - 1];
    if total - count as f64 * step > tol {
        out.push(last);
    } else if let Some(end) = out.last_mut() {
        *end = last;
    }
    Ok(out)
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let u = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * u - p).norm()
}

/// Distance from `p` to the nearest point of `polyline`.
pub fn distance_to_polyline(p: Vec2, polyline: &[Vec2]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [only] => (only - p).norm(),
        _ => polyline
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

fn mean_distance(from: &[Vec2], to: &[Vec2]) -> f64 {
    from.iter().map(|&p| distance_to_polyline(p, to)).sum::<f64>() / from.len() as f64
}

/// Mean nearest-point distance from `drawn` to `reference` and from
/// `reference` to `drawn`, after resampling both every `step`.
pub fn hausdorff_like(drawn: &[Vec2], reference: &[Vec2], step: f64) -> Result<(f64, f64), MetricsError> {
    let d = resample_equidistant(drawn, step)?;
    let r = resample_equidistant(reference, step)?;
    Ok((mean_distance(&d, &r), mean_distance(&r, &d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ticks: usize,
    /// Mean distance from the pen to the nearest path point (m).
    pub mean_pen_path: f64,
    pub sd_pen_path: f64,
    /// Mean arc length between the pen's projection and the setpoint (m).
    pub mean_pen_setpoint_alongpath: f64,
    pub sd_pen_setpoint_alongpath: f64,
    pub mean_pen_em: f64,
    pub sd_pen_em: f64,
    pub frac_em_beyond_15mm: f64,
    /// Drawn-to-reference and reference-to-drawn means (m). Zero-length pen
    /// traces are measured as a single point.
    pub hausdorff_like: [f64; 2],
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 10] = [
        "ticks",
        "mean_pen_path",
        "sd_pen_path",
        "mean_pen_setpoint_alongpath",
        "sd_pen_setpoint_alongpath",
        "mean_pen_em",
        "sd_pen_em",
        "frac_em_beyond_15mm",
        "hausdorff_drawn_ref",
        "hausdorff_ref_drawn",
    ];

    pub fn csv_fields(&self) -> [String; 10] {
        [
            self.ticks.to_string(),
            self.mean_pen_path.to_string(),
            self.sd_pen_path.to_string(),
            self.mean_pen_setpoint_alongpath.to_string(),
            self.sd_pen_setpoint_alongpath.to_string(),
            self.mean_pen_em.to_string(),
            self.sd_pen_em.to_string(),
            self.frac_em_beyond_15mm.to_string(),
            self.hausdorff_like[0].to_string(),
            self.hausdorff_like[1].to_string(),
        ]
    }
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Arc-length gap between two path parameters, shortest way round on
/// closed paths.
pub fn along_path_gap(path: &ReferencePath, a: f64, b: f64) -> f64 {
    let gap = (a - b).abs();
    if path.is_closed() {
        gap.min(path.length() - gap).max(0.0)
    } else {
        gap
    }
}

/// Per-tick distance from the pen to the nearest path point.
pub fn pen_path_errors(trace: &SessionTrace, path: &ReferencePath) -> Vec<f64> {
    trace
        .rows
        .iter()
        .map(|r| {
            let pen = r.pen();
            (path.eval(path.closest_theta(pen, None)).point - pen).norm()
        })
        .collect()
}

pub fn session_metrics(trace: &SessionTrace, path: &ReferencePath) -> Result<MetricsReport, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let mut pen_path = Vec::with_capacity(trace.len());
    let mut along = Vec::with_capacity(trace.len());
    let mut pen_em = Vec::with_capacity(trace.len());
    for r in &trace.rows {
        let pen = r.pen();
        let theta = path.closest_theta(pen, None);
        pen_path.push((path.eval(theta).point - pen).norm());
        along.push(along_path_gap(path, theta, r.theta));
        pen_em.push((r.magnet() - pen).norm());
    }
    let far = pen_em.iter().filter(|&&d| d > EM_FAR_THRESHOLD).count();

    let mut drawn: Vec<Vec2> = Vec::with_capacity(trace.len());
    for r in &trace.rows {
        if drawn.last() != Some(&r.pen()) {
            drawn.push(r.pen());
        }
    }
    let reference = path.polyline(DEFAULT_STEP);
    let hd = if drawn.len() < 2 || polyline_length(&drawn) <= 0.0 {
        let r = resample_equidistant(&reference, DEFAULT_STEP)?;
        (mean_distance(&drawn, &r), mean_distance(&r, &drawn))
    } else {
        hausdorff_like(&drawn, &reference, DEFAULT_STEP)?
    };

    let (mean_pen_path, sd_pen_path) = mean_sd(&pen_path);
    let (mean_along, sd_along) = mean_sd(&along);
    let (mean_pen_em, sd_pen_em) = mean_sd(&pen_em);
    Ok(MetricsReport {
        ticks: trace.len(),
        mean_pen_path,
        sd_pen_path,
        mean_pen_setpoint_alongpath: mean_along,
        sd_pen_setpoint_alongpath: sd_along,
        mean_pen_em,
        sd_pen_em,
        frac_em_beyond_15mm: far as f64 / trace.len() as f64,
        hausdorff_like: [hd.0, hd.1],
    })
}
