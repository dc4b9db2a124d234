use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solenoid_core::born_infeld::{
    check_hull_bounds, decompose_axis_point, decompose_to_m, defect, lift, Axis, HullStatus, DECOMP_TOL,
};
use solenoid_core::linalg::{norm, Point10};
use solenoid_core::symbol::{constant_rank_check, kernel_dim, symbol_residual, wave_cone_witness, witness_check};

const E1: [f64; 3] = [1.0, 0.0, 0.0];
const E2: [f64; 3] = [0.0, 1.0, 0.0];
const E3: [f64; 3] = [0.0, 0.0, 1.0];
const Z: [f64; 3] = [0.0; 3];

fn close(a: &Point10, b: &Point10, tol: f64) -> bool {
    a.dist(b) <= tol
}

#[test]
fn lift_of_orthonormal_pair() {
    let p = lift(E1, E2);
    assert_eq!(p, Point10::new(E1, E2, E3, 2.0));
}

#[test]
fn lift_of_parallel_pair() {
    let s = 2f64.sqrt();
    let p = lift(E1, [s, 0.0, 0.0]);
    assert!(close(&p, &Point10::new(E1, [s, 0.0, 0.0], Z, 2.0), 1e-15));
}

#[test]
fn defect_values() {
    let (dp, dh) = defect(&Point10::new(Z, Z, [0.0, 0.0, 2.0], 5f64.sqrt()));
    assert_eq!((dp, dh), (2.0, 0.0));
    let (dp, dh) = defect(&Point10::new(E1, E2, E3, 3.0));
    assert_eq!(dp, 0.0);
    assert!((dh - 1.0).abs() < 1e-15);
}

#[test]
fn inner_bound_certifies_membership() {
    let b = check_hull_bounds(&Point10::new(Z, Z, Z, 1.5));
    assert!(b.inner);
    assert_eq!(b.status, HullStatus::Inside);
}

#[test]
fn sharper_bound_certifies_exclusion() {
    let b = check_hull_bounds(&Point10::new(Z, Z, [0.0, 0.0, 2.0], 5f64.sqrt()));
    assert!(b.outer, "outer bound holds with equality");
    assert!(!b.serre);
    assert_eq!(b.status, HullStatus::Outside);
    // h² = 5 against 1 + 4 + 2·2 = 9.
    assert!((b.serre_slack + 4.0).abs() < 1e-12);
}

#[test]
fn d_axis_splitting_amplitude_is_sqrt_two() {
    let dec = decompose_axis_point(Axis::D, E1, 2.0).unwrap();
    let s = 2f64.sqrt();
    assert_eq!(dec.weights, vec![0.5, 0.5]);
    assert!(close(&dec.atoms[0], &Point10::new(E1, [s, 0.0, 0.0], Z, 2.0), 1e-15));
    assert!(close(&dec.atoms[1], &Point10::new(E1, [-s, 0.0, 0.0], Z, 2.0), 1e-15));
    assert_eq!(dec.max_defect(), 0.0);
    assert!(close(&dec.barycenter(), &Point10::new(E1, Z, Z, 2.0), 1e-15));
}

#[test]
fn p_axis_atoms_are_exact() {
    let dec = decompose_axis_point(Axis::P, E3, 2.0).unwrap();
    assert_eq!(dec.atoms[0], Point10::new(E1, E2, E3, 2.0));
    assert_eq!(dec.atoms[1], Point10::new([-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], E3, 2.0));
    assert_eq!(dec.barycenter(), Point10::new(Z, Z, E3, 2.0));
    assert_eq!(dec.max_defect(), 0.0);
}

#[test]
fn pure_energy_point_splits_along_a_parallel_pair() {
    let dec = decompose_to_m(&Point10::new(Z, Z, Z, 2.0)).unwrap();
    let l = 1.5f64.sqrt();
    assert_eq!(dec.atoms.len(), 2);
    assert!(close(
        &dec.atoms[0],
        &Point10::new([l, 0.0, 0.0], [l, 0.0, 0.0], Z, 2.0),
        1e-15
    ));
    assert!(close(
        &dec.atoms[1],
        &Point10::new([-l, 0.0, 0.0], [-l, 0.0, 0.0], Z, 2.0),
        1e-15
    ));
    assert!(dec.max_defect() <= 1e-15);
}

#[test]
fn mixed_point_uses_eight_atoms() {
    let x = Point10::new([0.3, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 0.1], 2.0);
    let dec = decompose_to_m(&x).unwrap();
    assert_eq!(dec.atoms.len(), 8);
    assert!(dec.weights.iter().all(|&w| w >= 0.0));
    assert!((dec.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert!(dec.barycenter().dist(&x) <= 1e-9);
}

#[test]
fn decomposition_outside_the_inner_bound_is_refused() {
    assert!(decompose_to_m(&Point10::new(E1, E1, Z, 2.5)).is_err());
}

fn random_inner_point(rng: &mut ChaCha8Rng) -> Point10 {
    let s = rng.gen_range(1.0..5.0);
    let mut blocks = [[0.0; 3]; 3];
    let mut budget = (s - 1.0) * rng.gen::<f64>();
    for b in blocks.iter_mut() {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let nv = norm(&v);
        let len = budget * rng.gen::<f64>();
        budget -= len;
        if nv > 0.0 {
            *b = [v[0] * len / nv, v[1] * len / nv, v[2] * len / nv];
        }
    }
    Point10::new(blocks[0], blocks[1], blocks[2], s)
}

#[test]
fn random_inner_points_decompose_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let x = random_inner_point(&mut rng);
        let dec = decompose_to_m(&x).unwrap();
        assert!(dec.atoms.len() <= 8);
        assert!(dec.max_defect() <= DECOMP_TOL);
        assert!((dec.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(dec.weights.iter().all(|&w| w >= 0.0));
        assert!(dec.barycenter().dist(&x) <= 1e-9);
    }
}

#[test]
fn convex_combinations_of_lifts_satisfy_necessary_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10_000 {
        let k = rng.gen_range(1..=6);
        let mut acc = [0.0; 10];
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let tot: f64 = raw.iter().sum();
        for w in raw {
            let scale = rng.gen_range(0.0..3.0);
            let d: [f64; 3] = std::array::from_fn(|_| scale * rng.gen_range(-1.0..1.0));
            let b: [f64; 3] = std::array::from_fn(|_| scale * rng.gen_range(-1.0..1.0));
            for (a, v) in acc.iter_mut().zip(lift(d, b).to_array()) {
                *a += w / tot * v;
            }
        }
        let hb = check_hull_bounds(&Point10::from_array(acc));
        assert!(hb.outer && hb.serre, "{acc:?}: {hb:?}");
    }
}

#[test]
fn symbol_has_constant_rank_two() {
    let r = constant_rank_check(1000, 9);
    assert!(r.passed(), "{:?}", r.failures);
    assert_eq!(kernel_dim([0.0, 0.6, 0.8]), 8);
}

#[test]
fn witnesses_annihilate_random_vectors() {
    let r = witness_check(10_000, 4);
    assert!(r.max_relative_residual <= 1e-12, "{}", r.max_relative_residual);
    assert!(r.max_norm_error <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lifts_have_zero_defect(
        d in prop::array::uniform3(-5.0..5.0f64),
        b in prop::array::uniform3(-5.0..5.0f64),
    ) {
        let (dp, dh) = defect(&lift(d, b));
        prop_assert!(dp == 0.0);
        prop_assert!(dh <= 1e-12 * lift(d, b).h);
    }

    #[test]
    fn inner_bound_implies_outer_and_sharper_bounds(
        a in prop::array::uniform10(-3.0..3.0f64),
        extra in 0.0..2.0f64,
    ) {
        let mut x = Point10::from_array(a);
        x.h = 1.0 + norm(&x.d) + norm(&x.b) + norm(&x.p) + extra;
        let hb = check_hull_bounds(&x);
        prop_assert!(hb.inner && hb.outer && hb.serre);
    }

    #[test]
    fn witness_annihilates_the_field_rows(a in prop::array::uniform10(-100.0..100.0f64)) {
        let v = Point10::from_array(a);
        let w = wave_cone_witness(&v);
        prop_assert!((norm(&w) - 1.0).abs() <= 1e-12);
        prop_assert!(symbol_residual(w, &v) <= 1e-12 * (1.0 + v.norm()));
    }
}
