use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solenoid_core::born_infeld::check_hull_bounds;
use solenoid_core::hulls::{
    build_in_approximation, certify_in_approximation, inner_cube_delta, lamination_hull_contains, shrink_toward,
};
use solenoid_core::linalg::{dist, interior_margin};
use solenoid_core::{Mat, Point10};

fn m2(a: f64, b: f64, c: f64, d: f64) -> Mat {
    Mat::from_rows(&[vec![a, b], vec![c, d]]).unwrap()
}

#[test]
fn rank_one_pair_is_found_with_a_verified_tree() {
    let k = vec![
        Mat::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        Mat::from_rows(&[vec![-1.0, 0.0]]).unwrap(),
    ];
    let f = Mat::from_rows(&[vec![0.4, 0.0]]).unwrap();
    let res = lamination_hull_contains(&k, &f, 1, 32).unwrap();
    assert!(res.found);
    let tree = res.tree.unwrap();
    assert!(tree.verify(&k, 1e-12));
    assert!(tree.value().sub(&f).max_abs() <= 1e-12);
}

#[test]
fn incompatible_pair_is_never_found() {
    // det(A − B) = 4 ≠ 0, so no admissible segment joins the two states.
    let k = vec![m2(1.0, 0.0, 0.0, 1.0), m2(-1.0, 0.0, 0.0, -1.0)];
    let f = m2(0.2, 0.0, 0.0, 0.2);
    for depth in 0..=3 {
        let res = lamination_hull_contains(&k, &f, depth, 16).unwrap();
        assert!(!res.found, "depth {depth}");
    }
}

#[test]
fn shrinking_the_square_corners_toward_the_origin() {
    let e: Vec<Vec<f64>> = vec![vec![-1.0, -1.0], vec![1.0, -1.0], vec![1.0, 1.0], vec![-1.0, 1.0]];
    let res = shrink_toward(&[vec![0.0, 0.0]], &e, 0.5).unwrap();
    let delta = 0.5 / (2.0 * 2f64.sqrt());
    assert!((res.delta - delta).abs() < 1e-15);
    assert_eq!(res.halvings, 0);
    for (p, q) in res.points.iter().zip(&e) {
        let want: Vec<f64> = q.iter().map(|x| (1.0 - delta) * x).collect();
        assert!(dist(p, &want) < 1e-15);
    }
    let (margin, _) = interior_margin(&[0.0, 0.0], &res.points).unwrap();
    assert!((margin - (1.0 - delta) / 2f64.sqrt()).abs() < 1e-9);
}

#[test]
fn inner_cube_half_width_for_pure_energy() {
    let q = Point10::new([0.0; 3], [0.0; 3], [0.0; 3], 2.0);
    let d = inner_cube_delta(&q).unwrap();
    // Worst corner: h = 2 − 3δ against 1 + 9√3·δ.
    let bound = 1.0 / (3.0 + 9.0 * 3f64.sqrt());
    assert!(d <= bound && d > bound - 2f64.powi(-10), "{d}");
    assert!(d >= 0.05);
    assert!(inner_cube_delta(&Point10::new([0.0; 3], [0.0; 3], [0.0; 3], 1.0)).is_none());
}

#[test]
fn in_approximation_for_a_single_point() {
    let q = Point10::new([0.0; 3], [0.0; 3], [0.0; 3], 2.0);
    let ia = build_in_approximation(&[q], 4, 0.9).unwrap();
    certify_in_approximation(&ia).unwrap();
    assert_eq!(ia.i_max(), 4);
    assert!(ia.roots[0].delta <= 0.0537);
    assert!(ia.roots[0].margin_in_f2 > 0.0);
    for lv in &ia.levels {
        assert!(lv.margin_lb > 0.0 && lv.nesting_margin_lb > 0.0);
        if lv.level >= 2 {
            assert!(lv.dist_ub <= 1.0 / lv.level as f64);
        }
    }
    // Random points of each level stay in the ball and near the anchors.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 1..=4 {
        for _ in 0..200 {
            let path: Vec<usize> = (0..i - 1).map(|_| rng.gen_range(0..ia.anchors.len())).collect();
            let x = ia.level_point(0, rng.gen_range(0..1024), &path);
            assert!(x.norm() <= ia.radius_bound + 1e-12);
            if i >= 2 {
                assert!(ia.dist_to_anchors(&x) <= ia.level(i).dist_ub + 1e-12);
            }
        }
    }
}

#[test]
fn in_approximation_rejects_bad_parameters() {
    let q = Point10::new([0.0; 3], [0.0; 3], [0.0; 3], 2.0);
    assert!(build_in_approximation(&[], 2, 0.9).is_err());
    assert!(build_in_approximation(&[q], 0, 0.9).is_err());
    assert!(build_in_approximation(&[q], 2, 1.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Cube corners around points with inner-bound slack satisfy the inner
    /// bound, so the cube lies in the hull.
    #[test]
    fn inner_cube_corners_satisfy_the_inner_bound(
        d in prop::array::uniform3(-0.3..0.3f64),
        h in 2.0..4.0f64,
        corner in 0u32..1024,
    ) {
        let q = Point10::new(d, [0.0; 3], [0.0; 3], h);
        let delta = inner_cube_delta(&q).unwrap();
        let mut x = q.to_array();
        for (k, v) in x.iter_mut().enumerate() {
            *v += if corner >> k & 1 == 1 { -3.0 * delta } else { 3.0 * delta };
        }
        prop_assert!(check_hull_bounds(&Point10::from_array(x)).inner);
    }
}
