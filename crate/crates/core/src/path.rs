//! Reference paths parametrized by arc length.
//!
//! Waypoints are interpolated with a centripetal Catmull-Rom spline. A lookup
//! table with sub-millimeter spacing maps arc length `theta` to a spline
//! segment and local parameter; between table nodes the map is linear.

use serde::{Deserialize, Serialize};

use crate::geom::{left_normal, unit_or_zero, Vec2};

/// Maximum arc-length spacing of the lookup table (m).
pub const TABLE_RESOLUTION: f64 = 0.5e-3;

/// Half width of the search window used by [`ReferencePath::closest_theta`]
/// when a hint is given (m).
pub const CLOSEST_WINDOW: f64 = 0.02;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PathError {
    #[error("a path needs at least two distinct waypoints")]
    TooFewPoints,
    #[error("waypoint {0} is not finite")]
    NonFinite(usize),
}

/// Cubic in Hermite-converted power basis on `t in [0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    c0: Vec2,
    c1: Vec2,
    c2: Vec2,
    c3: Vec2,
}

impl Segment {
    fn point(&self, t: f64) -> Vec2 {
        self.c0 + (self.c1 + (self.c2 + self.c3 * t) * t) * t
    }

    fn d1(&self, t: f64) -> Vec2 {
        self.c1 + (self.c2 * 2.0 + self.c3 * (3.0 * t)) * t
    }

    fn d2(&self, t: f64) -> Vec2 {
        self.c2 * 2.0 + self.c3 * (6.0 * t)
    }

    /// Arc length between `a` and `b` by 5-point Gauss-Legendre.
    fn arc_length(&self, a: f64, b: f64) -> f64 {
        const X: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        X.iter()
            .zip(W.iter())
            .map(|(x, w)| w * self.d1(mid + half * x).norm())
            .sum::<f64>()
            * half
    }
}

/// Centripetal Catmull-Rom segment through `p1 -> p2`.
fn catmull_rom(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2) -> Segment {
    let knot = |a: Vec2, b: Vec2| (a - b).norm().sqrt().max(1e-9);
    let dt0 = knot(p1, p0);
    let dt1 = knot(p2, p1);
    let dt2 = knot(p3, p2);
    let mut m1 = (p1 - p0) / dt0 - (p2 - p0) / (dt0 + dt1) + (p2 - p1) / dt1;
    let mut m2 = (p2 - p1) / dt1 - (p3 - p1) / (dt1 + dt2) + (p3 - p2) / dt2;
    m1 *= dt1;
    m2 *= dt1;
    Segment {
        c0: p1,
        c1: m1,
        c2: (p2 - p1) * 3.0 - m1 * 2.0 - m2,
        c3: (p1 - p2) * 2.0 + m1 + m2,
    }
}

/// One interval of the arc-length table.
#[derive(Debug, Clone, Copy)]
struct TableEntry {
    theta0: f64,
    theta1: f64,
    segment: usize,
    t0: f64,
    t1: f64,
}

/// Point and normalized tangent at some arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub point: Vec2,
    pub tangent: Vec2,
}

/// Path sample with derivatives with respect to `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub theta: f64,
    pub point: Vec2,
    pub tangent: Vec2,
    /// d point / d theta (unit length up to table interpolation error).
    pub d_point: Vec2,
    /// d tangent / d theta.
    pub d_tangent: Vec2,
}

/// Squared lag and contour errors of the pen relative to `s(theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagContour {
    pub lag_sq: f64,
    pub contour_sq: f64,
    /// `s(theta) - pen`.
    pub r_theta: Vec2,
    pub tangent: Vec2,
}

/// Arc-length parametrized planar curve.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    waypoints: Vec<Vec2>,
    closed: bool,
    segments: Vec<Segment>,
    table: Vec<TableEntry>,
    length: f64,
}

impl ReferencePath {
    /// Builds the spline through `waypoints`. Consecutive duplicates are
    /// dropped; a closed path also joins the last waypoint back to the first.
    pub fn new(waypoints: &[Vec2], closed: bool) -> Result<Self, PathError> {
        for (i, p) in waypoints.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(PathError::NonFinite(i));
            }
        }
        let mut pts: Vec<Vec2> = Vec::with_capacity(waypoints.len());
        for p in waypoints {
            if pts.last().is_none_or(|q: &Vec2| (q - p).norm() > 1e-12) {
                pts.push(*p);
            }
        }
        if closed && pts.len() > 2 && (pts[0] - pts[pts.len() - 1]).norm() <= 1e-12 {
            pts.pop();
        }
        if pts.len() < 2 {
            return Err(PathError::TooFewPoints);
        }
        let closed = closed && pts.len() > 2;

        let n = pts.len();
        let mut segments = Vec::new();
        if closed {
            for i in 0..n {
                let p0 = pts[(i + n - 1) % n];
                let p1 = pts[i];
                let p2 = pts[(i + 1) % n];
                let p3 = pts[(i + 2) % n];
                segments.push(catmull_rom(p0, p1, p2, p3));
            }
        } else {
            for i in 0..n - 1 {
                let p1 = pts[i];
                let p2 = pts[i + 1];
                let p0 = if i == 0 { p1 * 2.0 - p2 } else { pts[i - 1] };
                let p3 = if i + 2 < n { pts[i + 2] } else { p2 * 2.0 - p1 };
                segments.push(catmull_rom(p0, p1, p2, p3));
            }
        }

        let mut table = Vec::new();
        let mut theta = 0.0;
        for (si, seg) in segments.iter().enumerate() {
            // Coarse length estimate sets the subdivision count.
            let coarse: f64 = (0..8)
                .map(|k| seg.arc_length(k as f64 / 8.0, (k + 1) as f64 / 8.0))
                .sum();
            let pieces = ((coarse / TABLE_RESOLUTION).ceil() as usize).max(2);
            for k in 0..pieces {
                let t0 = k as f64 / pieces as f64;
                let t1 = (k + 1) as f64 / pieces as f64;
                let len = seg.arc_length(t0, t1);
                if len <= 0.0 {
                    continue;
                }
                table.push(TableEntry {
                    theta0: theta,
                    theta1: theta + len,
                    segment: si,
                    t0,
                    t1,
                });
                theta += len;
            }
        }
        if table.is_empty() || theta <= 0.0 {
            return Err(PathError::TooFewPoints);
        }
        Ok(ReferencePath {
            waypoints: pts,
            closed,
            segments,
            table,
            length: theta,
        })
    }

    /// Total arc length `L` (m).
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn clamp_theta(&self, theta: f64) -> f64 {
        if theta.is_nan() {
            return 0.0;
        }
        theta.clamp(0.0, self.length)
    }

    fn locate(&self, theta: f64) -> (usize, f64) {
        let theta = self.clamp_theta(theta);
        let idx = self
            .table
            .partition_point(|e| e.theta1 < theta)
            .min(self.table.len() - 1);
        (idx, theta)
    }

    /// Point and unit tangent at `theta`, clamped to `[0, L]`.
    pub fn eval(&self, theta: f64) -> PathPoint {
        let s = self.sample(theta);
        PathPoint {
            point: s.point,
            tangent: s.tangent,
        }
    }

    /// Point, tangent and their `theta` derivatives.
    pub fn sample(&self, theta: f64) -> PathSample {
        let (idx, theta) = self.locate(theta);
        let e = &self.table[idx];
        let seg = &self.segments[e.segment];
        let dt_dtheta = (e.t1 - e.t0) / (e.theta1 - e.theta0);
        let t = e.t0 + (theta - e.theta0) * dt_dtheta;
        let point = seg.point(t);
        let d1 = seg.d1(t);
        let d2 = seg.d2(t);
        let speed = d1.norm();
        let (tangent, d_tangent) = if speed > 1e-15 {
            let n = d1 / speed;
            // Component of the second derivative orthogonal to the tangent.
            let dn_dt = (d2 - n * n.dot(&d2)) / speed;
            (n, dn_dt * dt_dtheta)
        } else {
            (unit_or_zero(seg.point((t + 1e-6).min(1.0)) - seg.point((t - 1e-6).max(0.0))), Vec2::zeros())
        };
        PathSample {
            theta,
            point,
            tangent,
            d_point: d1 * dt_dtheta,
            d_tangent,
        }
    }

    /// Lag/contour decomposition of `s(theta) - pen` along the tangent.
    pub fn lag_contour(&self, theta: f64, pen: Vec2) -> LagContour {
        let p = self.eval(theta);
        lag_contour_at(p.point, p.tangent, pen)
    }

    /// Arc length of the path point nearest to `pen`.
    ///
    /// With a hint, only `hint +/- 2 cm` is searched and ties are resolved
    /// toward the hint. Without one, the whole table is scanned. The best
    /// table node is refined by golden-section search over its neighbors.
    pub fn closest_theta(&self, pen: Vec2, hint: Option<f64>) -> f64 {
        let (lo, hi) = match hint {
            Some(h) => {
                let h = self.clamp_theta(h);
                (
                    (h - CLOSEST_WINDOW).max(0.0),
                    (h + CLOSEST_WINDOW).min(self.length),
                )
            }
            None => (0.0, self.length),
        };
        let hint_theta = hint.map(|h| self.clamp_theta(h));
        let dist = |th: f64| (self.eval(th).point - pen).norm_squared();

        let mut nodes: Vec<f64> = Vec::new();
        nodes.push(lo);
        let start = self.table.partition_point(|e| e.theta0 <= lo);
        for e in &self.table[start..] {
            if e.theta0 >= hi {
                break;
            }
            nodes.push(e.theta0);
        }
        nodes.push(hi);

        let mut best_i = 0;
        let mut best_d = f64::INFINITY;
        for (i, &th) in nodes.iter().enumerate() {
            let d = dist(th);
            let better = if d < best_d * (1.0 - 1e-12) {
                true
            } else if d <= best_d * (1.0 + 1e-12) {
                match hint_theta {
                    Some(h) => (th - h).abs() < (nodes[best_i] - h).abs(),
                    None => false,
                }
            } else {
                false
            };
            if better {
                best_d = d;
                best_i = i;
            }
        }

        let a = nodes[best_i.saturating_sub(1)];
        let b = nodes[(best_i + 1).min(nodes.len() - 1)];
        let refined = golden_section(a, b, &dist);
        if dist(refined) <= best_d {
            refined
        } else {
            nodes[best_i]
        }
    }

    /// Points along the curve spaced by at most `step` in arc length,
    /// including both ends.
    pub fn polyline(&self, step: f64) -> Vec<Vec2> {
        let n = ((self.length / step.max(1e-6)).ceil() as usize).max(1);
        (0..=n)
            .map(|i| self.eval(self.length * i as f64 / n as f64).point)
            .collect()
    }

    /// Signed curvature at `theta` (1/m).
    pub fn curvature(&self, theta: f64) -> f64 {
        let s = self.sample(theta);
        s.d_tangent.dot(&left_normal(s.tangent))
    }
}

/// Lag/contour decomposition for an explicit setpoint and tangent.
pub fn lag_contour_at(setpoint: Vec2, tangent: Vec2, pen: Vec2) -> LagContour {
    let r = setpoint - pen;
    let along = r.dot(&tangent);
    let perp = r - tangent * along;
    LagContour {
        lag_sq: along * along,
        contour_sq: perp.norm_squared(),
        r_theta: r,
        tangent,
    }
}

fn golden_section(mut a: f64, mut b: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - (b - a) * INV_PHI;
    let mut d = a + (b - a) * INV_PHI;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..60 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INV_PHI;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INV_PHI;
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Serialized path description: waypoints in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PathFile {
    pub closed: bool,
    pub points_mm: Vec<[f64; 2]>,
}

impl PathFile {
    pub fn to_path(&self) -> Result<ReferencePath, PathError> {
        let pts: Vec<Vec2> = self
            .points_mm
            .iter()
            .map(|p| Vec2::new(p[0] * 1e-3, p[1] * 1e-3))
            .collect();
        ReferencePath::new(&pts, self.closed)
    }

    pub fn from_path(path: &ReferencePath) -> Self {
        PathFile {
            closed: path.is_closed(),
            points_mm: path
                .waypoints()
                .iter()
                .map(|p| [p.x * 1e3, p.y * 1e3])
                .collect(),
        }
    }
}
