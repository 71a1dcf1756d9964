use std::f64::consts::PI;

use magpen_core::geom::{rotate, Vec2};
use magpen_core::metrics::{distance_to_polyline, hausdorff_like, resample_equidistant, session_metrics, MetricsReport};
use magpen_core::shapes::ShapeSpec;
use magpen_core::trace::SessionTrace;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn wobbly_circle(r: f64, amp: f64, lobes: f64, phase: f64, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            let rr = r + amp * (lobes * a + phase).sin();
            Vec2::new(0.1 + rr * a.cos(), 0.06 + rr * a.sin())
        })
        .collect()
}

fn polyline() -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec((0.0..0.2f64, 0.0..0.1f64), 3..12)
        .prop_map(|v| v.into_iter().map(|(x, y)| Vec2::new(x, y)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hausdorff_swaps_with_its_arguments(a in polyline(), b in polyline()) {
        let (ab, ba) = hausdorff_like(&a, &b, 1e-3).unwrap();
        let (ba2, ab2) = hausdorff_like(&b, &a, 1e-3).unwrap();
        prop_assert_eq!(ab, ab2);
        prop_assert_eq!(ba, ba2);
    }

    #[test]
    fn hausdorff_ignores_rigid_motions(a in polyline(), b in polyline(), angle in -3.2..3.2f64, dx in -0.1..0.1f64, dy in -0.1..0.1f64) {
        let move_all = |v: &[Vec2]| -> Vec<Vec2> { v.iter().map(|p| rotate(*p, angle) + Vec2::new(dx, dy)).collect() };
        let before = hausdorff_like(&a, &b, 1e-3).unwrap();
        let after = hausdorff_like(&move_all(&a), &move_all(&b), 1e-3).unwrap();
        prop_assert!((before.0 - after.0).abs() <= 1e-9 && (before.1 - after.1).abs() <= 1e-9, "{:?} {:?}", before, after);
    }

    #[test]
    fn finer_resampling_barely_moves_the_mean(amp in 1e-3..5e-3f64, lobes in 2.0..6.0f64, phase in 0.0..6.3f64) {
        let drawn = wobbly_circle(0.04, amp, lobes.round(), phase, 2000);
        let reference = wobbly_circle(0.04, 0.0, 0.0, 0.0, 2000);
        let coarse = hausdorff_like(&drawn, &reference, 1e-3).unwrap();
        let fine = hausdorff_like(&drawn, &reference, 0.25e-3).unwrap();
        prop_assert!((coarse.0 - fine.0).abs() < 0.02 * fine.0);
        prop_assert!((coarse.1 - fine.1).abs() < 0.02 * fine.1);
    }

    #[test]
    fn resampling_a_segment_matches_arithmetic(len in 1e-3..0.3f64, step in 1e-4..2e-2f64, angle in -3.2..3.2f64) {
        let dir = Vec2::new(angle.cos(), angle.sin());
        let a = Vec2::new(0.05, 0.05);
        let b = a + dir * len;
        let mid = a + dir * (0.37 * len);
        let out = resample_equidistant(&[a, mid, b], step).unwrap();
        let whole = ((len + 1e-9) / step).floor() as usize;
        let expected = whole + 1 + usize::from(len - whole as f64 * step > 1e-9);
        prop_assert_eq!(out.len(), expected);
        for (k, p) in out.iter().enumerate().take(out.len() - 1) {
            prop_assert!(((p - a).norm() - k as f64 * step).abs() < 1e-12, "point {}", k);
        }
        prop_assert_eq!(*out.last().unwrap(), b);
    }
}

#[test]
fn radial_noise_mean_distance_is_half_normal() {
    let r = 0.04;
    let sigma = 1e-3;
    let circle = wobbly_circle(r, 0.0, 0.0, 0.0, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, sigma).unwrap();
    let n = 20_000;
    let total: f64 = (0..n)
        .map(|i| {
            let a = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            let rr = r + noise.sample(&mut rng);
            distance_to_polyline(Vec2::new(0.1 + rr * a.cos(), 0.06 + rr * a.sin()), &circle)
        })
        .sum();
    let mean = total / n as f64;
    let expected = sigma * (2.0 / PI).sqrt();
    assert!((mean - expected).abs() < 0.02 * expected, "{mean} vs {expected}");
}

fn segment_foot(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let u = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    ((a + ab * u - p).norm(), u * ab.norm())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn stored_trace_metrics_match_geometry() {
    let trace = SessionTrace::read_csv(include_str!("data/line_trace.csv").as_bytes()).unwrap();
    trace.validate().unwrap();
    let golden: MetricsReport = serde_json::from_str(include_str!("data/line_metrics.json")).unwrap();
    let path = ShapeSpec::Line {
        start_mm: [30.0, 40.0],
        end_mm: [200.0, 90.0],
    }
    .build()
    .unwrap();
    let report = session_metrics(&trace, &path).unwrap();

    let (a, b) = (Vec2::new(0.03, 0.04), Vec2::new(0.2, 0.09));
    let feet: Vec<(f64, f64)> = trace.rows.iter().map(|r| segment_foot(r.pen(), a, b)).collect();
    let pen_path: Vec<f64> = feet.iter().map(|f| f.0).collect();
    let along: Vec<f64> = feet.iter().zip(&trace.rows).map(|(f, r)| (f.1 - r.theta).abs()).collect();
    let pen_em: Vec<f64> = trace.rows.iter().map(|r| (r.magnet() - r.pen()).norm()).collect();
    assert!((report.mean_pen_path - mean(&pen_path)).abs() < 1e-9);
    assert!((report.mean_pen_setpoint_alongpath - mean(&along)).abs() < 1e-9);
    assert!((report.mean_pen_em - mean(&pen_em)).abs() < 1e-12);
    assert_eq!(report.ticks, trace.len());

    for (got, want) in [
        (report.mean_pen_path, golden.mean_pen_path),
        (report.sd_pen_path, golden.sd_pen_path),
        (report.mean_pen_setpoint_alongpath, golden.mean_pen_setpoint_alongpath),
        (report.mean_pen_em, golden.mean_pen_em),
        (report.hausdorff_like[0], golden.hausdorff_like[0]),
        (report.hausdorff_like[1], golden.hausdorff_like[1]),
    ] {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
