//! Generators for the study shapes. Parameters are in millimeters, the
//! resulting waypoints in meters.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geom::{rotate, Vec2};
use crate::path::{PathError, PathFile, ReferencePath};

/// Declarative path description used by configs and the session protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Line {
        start_mm: [f64; 2],
        end_mm: [f64; 2],
    },
    Circle {
        center_mm: [f64; 2],
        radius_mm: f64,
    },
    Ellipse {
        center_mm: [f64; 2],
        radii_mm: [f64; 2],
    },
    /// Archimedean spiral winding outward counter-clockwise.
    Spiral {
        center_mm: [f64; 2],
        inner_radius_mm: f64,
        outer_radius_mm: f64,
        turns: f64,
    },
    Sinusoid {
        start_mm: [f64; 2],
        length_mm: f64,
        amplitude_mm: f64,
        periods: f64,
    },
    /// Two straight legs meeting at a corner that turns by `turn_deg`.
    Corner {
        vertex_mm: [f64; 2],
        leg_mm: f64,
        turn_deg: f64,
    },
    Points(PathFile),
}

const SAMPLES_PER_CURVE: usize = 96;

impl ShapeSpec {
    pub fn build(&self) -> Result<ReferencePath, PathError> {
        let mm = |p: [f64; 2]| Vec2::new(p[0] * 1e-3, p[1] * 1e-3);
        match self {
            ShapeSpec::Line { start_mm, end_mm } => {
                ReferencePath::new(&[mm(*start_mm), mm(*end_mm)], false)
            }
            ShapeSpec::Circle {
                center_mm,
                radius_mm,
            } => ellipse_points(mm(*center_mm), radius_mm * 1e-3, radius_mm * 1e-3),
            ShapeSpec::Ellipse { center_mm, radii_mm } => {
                ellipse_points(mm(*center_mm), radii_mm[0] * 1e-3, radii_mm[1] * 1e-3)
            }
            ShapeSpec::Spiral {
                center_mm,
                inner_radius_mm,
                outer_radius_mm,
                turns,
            } => {
                let c = mm(*center_mm);
                let n = (SAMPLES_PER_CURVE as f64 * turns.max(0.25)).ceil() as usize;
                let pts: Vec<Vec2> = (0..=n)
                    .map(|i| {
                        let f = i as f64 / n as f64;
                        let r = (inner_radius_mm + (outer_radius_mm - inner_radius_mm) * f) * 1e-3;
                        let a = 2.0 * PI * turns * f;
                        c + Vec2::new(r * a.cos(), r * a.sin())
                    })
                    .collect();
                ReferencePath::new(&pts, false)
            }
            ShapeSpec::Sinusoid {
                start_mm,
                length_mm,
                amplitude_mm,
                periods,
            } => {
                let s = mm(*start_mm);
                let n = (SAMPLES_PER_CURVE as f64 * periods.max(0.5)).ceil() as usize;
                let pts: Vec<Vec2> = (0..=n)
                    .map(|i| {
                        let f = i as f64 / n as f64;
                        let x = length_mm * f;
                        let y = amplitude_mm * (2.0 * PI * periods * f).sin();
                        s + Vec2::new(x * 1e-3, y * 1e-3)
                    })
                    .collect();
                ReferencePath::new(&pts, false)
            }
            ShapeSpec::Corner {
                vertex_mm,
                leg_mm,
                turn_deg,
            } => ReferencePath::new(&corner_points(mm(*vertex_mm), leg_mm * 1e-3, turn_deg.to_radians()), false),
            ShapeSpec::Points(file) => file.to_path(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeSpec::Line { .. } => "line",
            ShapeSpec::Circle { .. } => "circle",
            ShapeSpec::Ellipse { .. } => "ellipse",
            ShapeSpec::Spiral { .. } => "spiral",
            ShapeSpec::Sinusoid { .. } => "sinusoid",
            ShapeSpec::Corner { .. } => "corner",
            ShapeSpec::Points(_) => "points",
        }
    }
}

fn ellipse_points(c: Vec2, rx: f64, ry: f64) -> Result<ReferencePath, PathError> {
    let pts: Vec<Vec2> = (0..SAMPLES_PER_CURVE)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / SAMPLES_PER_CURVE as f64;
            c + Vec2::new(rx * a.cos(), ry * a.sin())
        })
        .collect();
    ReferencePath::new(&pts, true)
}

/// Corner path: the first leg arrives along +x, the second leaves rotated by
/// `turn`. Legs are densely sampled so the spline stays straight away from
/// the vertex.
fn corner_points(vertex: Vec2, leg: f64, turn: f64) -> Vec<Vec2> {
    let per_leg = ((leg / 0.005).ceil() as usize).max(2);
    let dir_in = Vec2::new(1.0, 0.0);
    let dir_out = rotate(dir_in, turn);
    let mut pts = Vec::with_capacity(2 * per_leg + 1);
    for i in 0..per_leg {
        pts.push(vertex - dir_in * (leg * (per_leg - i) as f64 / per_leg as f64));
    }
    pts.push(vertex);
    for i in 1..=per_leg {
        pts.push(vertex + dir_out * (leg * i as f64 / per_leg as f64));
    }
    pts
}
