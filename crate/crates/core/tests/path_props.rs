use magpen_core::geom::{left_normal, Vec2};
use magpen_core::path::{ReferencePath, CLOSEST_WINDOW};
use magpen_core::shapes::ShapeSpec;
use proptest::prelude::*;

fn smooth_shapes() -> Vec<ReferencePath> {
    [
        ShapeSpec::Circle {
            center_mm: [115.0, 65.0],
            radius_mm: 40.0,
        },
        ShapeSpec::Ellipse {
            center_mm: [115.0, 65.0],
            radii_mm: [60.0, 30.0],
        },
        ShapeSpec::Sinusoid {
            start_mm: [25.0, 65.0],
            length_mm: 180.0,
            amplitude_mm: 20.0,
            periods: 1.0,
        },
        ShapeSpec::Spiral {
            center_mm: [115.0, 65.0],
            inner_radius_mm: 10.0,
            outer_radius_mm: 50.0,
            turns: 2.0,
        },
    ]
    .iter()
    .map(|s| s.build().unwrap())
    .collect()
}

fn open_shapes() -> Vec<ReferencePath> {
    [
        ShapeSpec::Line {
            start_mm: [20.0, 20.0],
            end_mm: [200.0, 110.0],
        },
        ShapeSpec::Sinusoid {
            start_mm: [25.0, 65.0],
            length_mm: 180.0,
            amplitude_mm: 20.0,
            periods: 1.0,
        },
        ShapeSpec::Corner {
            vertex_mm: [115.0, 65.0],
            leg_mm: 60.0,
            turn_deg: 90.0,
        },
    ]
    .iter()
    .map(|s| s.build().unwrap())
    .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn lag_and_contour_split_the_offset(idx in 0usize..4, f in 0.0..1.0f64, dx in -0.05..0.05f64, dy in -0.05..0.05f64) {
        let path = &smooth_shapes()[idx];
        let theta = f * path.length();
        let pen = path.eval(theta).point + Vec2::new(dx, dy);
        let lc = path.lag_contour(theta, pen);
        let r2 = lc.r_theta.norm_squared();
        prop_assert!((lc.lag_sq + lc.contour_sq - r2).abs() <= 1e-10 * r2.max(1e-12));
    }

    #[test]
    fn tangent_is_continuous(idx in 0usize..4, f in 0.0..1.0f64) {
        let path = &smooth_shapes()[idx];
        let theta = f * (path.length() - 1e-5);
        let a = path.eval(theta).tangent;
        let b = path.eval(theta + 1e-5).tangent;
        prop_assert!((a.norm() - 1.0).abs() < 1e-9);
        prop_assert!((a - b).norm() < 1e-2, "{:?} {:?}", a, b);
    }

    #[test]
    fn closest_theta_beats_dense_samples(idx in 0usize..3, f in 0.0..1.0f64, off in -0.008..0.008f64, slip in -0.015..0.015f64) {
        let path = &open_shapes()[idx];
        let theta = f * path.length();
        let p = path.eval(theta);
        let pen = p.point + left_normal(p.tangent) * off;
        let hint = path.clamp_theta(theta + slip);
        let found = path.closest_theta(pen, Some(hint));
        let got = (path.eval(found).point - pen).norm();
        let lo = (hint - CLOSEST_WINDOW).max(0.0);
        let hi = (hint + CLOSEST_WINDOW).min(path.length());
        let n = ((hi - lo) / 0.5e-3).ceil() as usize;
        let best = (0..=n)
            .map(|k| (path.eval(lo + (hi - lo) * k as f64 / n as f64).point - pen).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(got <= best + 1e-9, "found {} at {}, samples {}", got, found, best);
        prop_assert!((found - hint).abs() <= CLOSEST_WINDOW + 1e-12);
    }
}
