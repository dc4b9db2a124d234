use std::sync::Arc;

use proptest::prelude::*;
use solenoid_core::born_infeld::defect;
use solenoid_core::geometry::Polytope;
use solenoid_core::hulls::build_in_approximation;
use solenoid_core::staircase::{
    box_data_div_residual, default_test_suite, run_staircase, stitch_and_test, BoxPiece, Schedule, StaircaseConfig,
    TestFunction,
};
use solenoid_core::Point10;

fn energy_two() -> Point10 {
    Point10::new([0.0; 3], [0.0; 3], [0.0; 3], 2.0)
}

fn unit_cube_run(
    cfg: StaircaseConfig,
) -> (
    solenoid_core::staircase::Staircase,
    solenoid_core::staircase::StaircaseReport,
) {
    let v = energy_two();
    let ia = build_in_approximation(&[v], cfg.i_max, 0.9).unwrap();
    run_staircase(&[(Polytope::unit_cube(3), v)], Arc::new(ia), cfg).unwrap()
}

#[test]
fn schedule_rejects_large_steps() {
    let mut s = Schedule::new(1.0);
    s.push(-1.0);
    assert!(s.check().is_err());
    let mut s = Schedule::new(1.0);
    s.push(-2.0);
    s.push(-3.0);
    s.check().unwrap();
    assert_eq!(s.delta(3), 2f64.powi(-5));
}

#[test]
fn staircase_on_the_unit_cube() {
    let cfg = StaircaseConfig {
        i_max: 3,
        tau_total: 0.15,
        ..StaircaseConfig::default()
    };
    let (st, r) = unit_cube_run(cfg);
    assert!(r.schedule_ok);
    assert!(r.final_dist_fraction >= 0.85, "{}", r.final_dist_fraction);
    assert!(r.final_in_u_fraction >= 0.85, "{}", r.final_in_u_fraction);
    let incr: Vec<f64> = r.levels.iter().filter_map(|l| l.l1_increment).collect();
    assert_eq!(incr.len(), 2);
    assert!(incr.windows(2).all(|w| w[1] < w[0]), "{incr:?}");
    for (i, l) in r.levels.iter().enumerate() {
        if let Some(e) = l.eps {
            assert!(e < 0.5f64.powi(i as i32 + 1));
        }
    }
    let later: f64 = r.levels[1..].iter().map(|l| l.delta).sum();
    assert!(later < 0.5 * r.levels[0].delta);
    assert!(r.average_bound <= 1e-10);
    assert!(r.weak_div_bound <= 1e-10);
    assert!(r.final_max_defect.is_finite());
    // Resampled final values agree with the report's distance fraction.
    let pts = st.sample_final(2000, 99);
    let ia = st.in_approximation();
    let near = pts.iter().filter(|(_, v)| ia.dist_to_anchors(v) <= 1.0 / 3.0).count() as f64 / 2000.0;
    assert!(
        (near - r.final_dist_fraction).abs() < 0.03,
        "{near} vs {}",
        r.final_dist_fraction
    );
    assert!(pts.iter().all(|(_, v)| v.is_finite() && defect(v).0.is_finite()));
}

#[test]
fn staircase_is_deterministic() {
    let cfg = StaircaseConfig {
        samples: 2000,
        gap_samples: 500,
        seed: 5,
        ..StaircaseConfig::default()
    };
    let (a, ra) = unit_cube_run(cfg.clone());
    let (b, rb) = unit_cube_run(cfg);
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    for k in 0..50u64 {
        let x = [0.013 * k as f64 % 1.0, 0.37, 0.71];
        assert_eq!(a.value_at(x, k), b.value_at(x, k));
    }
    assert_eq!(a.value_at([2.0, 0.5, 0.5], 0), None);
}

fn two_boxes() -> Vec<BoxPiece> {
    vec![
        BoxPiece {
            lo: [0.0; 3],
            hi: [0.5, 1.0, 1.0],
            value: energy_two(),
        },
        BoxPiece {
            lo: [0.5, 0.0, 0.0],
            hi: [1.0; 3],
            value: Point10::new([0.0, 0.2, 0.0], [0.0; 3], [0.0; 3], 2.2),
        },
    ]
}

#[test]
fn box_data_with_a_tangential_jump_is_divergence_free() {
    assert!(box_data_div_residual(&two_boxes()).unwrap() <= 1e-14);
    let mut bad = two_boxes();
    bad[1].value.d = [0.3, 0.0, 0.0];
    assert!(box_data_div_residual(&bad).unwrap() > 1e-3);
}

#[test]
fn weak_star_residuals_respect_the_bound_and_decay() {
    let cfg = StaircaseConfig {
        samples: 20_000,
        ..StaircaseConfig::default()
    };
    let suite = default_test_suite(3, 1);
    let reports: Vec<_> = [2usize, 4, 8]
        .iter()
        .map(|&j| stitch_and_test(&two_boxes(), j, &cfg, 0.9, &suite).unwrap())
        .collect();
    for r in &reports {
        assert!(r.passed);
        for row in &r.rows {
            assert!(
                row.residual <= row.bound,
                "j={} {}: {} > {}",
                r.j,
                row.name,
                row.residual,
                row.bound
            );
        }
    }
    for (a, b) in reports[0].rows.iter().zip(&reports[2].rows) {
        assert_eq!(a.name, b.name);
        assert!(
            b.residual <= 0.6 * a.residual,
            "{}: {} vs {}",
            a.name,
            b.residual,
            a.residual
        );
    }
}

#[test]
fn test_function_bounds() {
    let lo = [0.0, -1.0, 0.0];
    let hi = [1.0, 1.0, 2.0];
    let f = TestFunction::Product(0, 2);
    assert_eq!(f.eval([0.5, 0.0, 2.0]), 1.0);
    assert!(f.sup_bound(lo, hi) >= 2.0);
    assert!(f.lipschitz(lo, hi) >= 2f64.hypot(1.0) - 1e-12);
    let c = TestFunction::Constant(3.0);
    assert_eq!(c.lipschitz(lo, hi), 0.0);
    let m = TestFunction::MaxAffine(vec![([1.0, 0.0, 0.0], 0.0), ([0.0, -2.0, 0.0], 1.0)]);
    assert_eq!(m.eval([0.5, 1.0, 0.0]), 0.5);
    assert!(m.lipschitz(lo, hi) >= 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dyadic_schedules_below_the_threshold_pass(
        delta1 in 0.01..1.0f64,
        extra in prop::collection::vec(0u32..6, 1..8),
    ) {
        let mut s = Schedule::new(delta1);
        for (k, e) in extra.iter().enumerate() {
            s.push(-((k + 2) as f64) - *e as f64);
        }
        prop_assert!(s.check().is_ok());
        for i in 1..s.log2_delta.len() {
            prop_assert!(s.delta(i + 1) < s.delta(i));
            prop_assert!((s.delta(i + 1) - s.delta(i) * s.eps(i)).abs() <= 1e-15 * s.delta(i));
        }
    }
}
