use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solenoid_core::born_infeld::{defect, lift};
use solenoid_core::fields::{average, empirical_measure, polynomial_test_suite, relative_div_residuals, Value};
use solenoid_core::geometry::Polytope;
use solenoid_core::laminate::{build_bi_laminate, build_laminate, split_frame, BILaminateSpec, LaminateSpec};
use solenoid_core::{Error, Mat, Point10};

fn row(v: &[f64]) -> Mat {
    Mat::new(1, v.len(), v.to_vec()).unwrap()
}

fn assert_rotation(q: &Mat) {
    let n = q.rows();
    let qtq = q.transpose().matmul(q);
    assert!(qtq.sub(&Mat::identity(n)).max_abs() < 1e-12);
    assert!((q.det() - 1.0).abs() < 1e-12);
}

#[test]
fn frame_for_a_vertical_difference_is_a_quarter_turn() {
    let q = split_frame(&row(&[0.0, 1.0]), &row(&[0.0, -1.0])).unwrap();
    assert_rotation(&q);
    let d = row(&[0.0, 2.0]);
    assert!(d.matmul(&q).get(0, 1).abs() < 1e-15);
    // Q e_2 = ±e_1.
    assert!((q.get(0, 1).abs() - 1.0).abs() < 1e-15);
}

#[test]
fn frame_for_random_rank_one_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let u: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let d = Mat::new(2, 3, (0..6).map(|k| u[k / 3] * v[k % 3]).collect()).unwrap();
        let q = split_frame(&d, &Mat::zeros(2, 3)).unwrap();
        assert_rotation(&q);
        let last = d.matmul(&q).col(2);
        assert!(last.iter().all(|x| x.abs() <= 1e-12), "{last:?}");
    }
}

#[test]
fn full_rank_difference_has_no_splitting_direction() {
    let a = Mat::identity(2);
    let b = a.scale(-1.0);
    assert!(matches!(split_frame(&a, &b), Err(Error::NoSplittingDirection { .. })));
}

#[test]
fn plane_laminate_certificate() {
    let (a, b) = (row(&[1.0, 0.0]), row(&[-1.0, 0.0]));
    let spec = LaminateSpec::new(a.clone(), b.clone(), 0.5, 0.1).unwrap();
    let lam = build_laminate(&spec, &Polytope::unit_cube(2), 0.05).unwrap();
    assert!(lam.potential.sup_norm() < 0.1);
    assert!(lam.potential.max_boundary_value(0) <= 1e-10);
    assert!(lam.far_fraction() <= 0.05);
    let em = empirical_measure(&lam.field, &[Value::new(a), Value::new(b)], 0.1).unwrap();
    assert!(
        (em.weights[0] - 0.5).abs() <= 0.06 && (em.weights[1] - 0.5).abs() <= 0.06,
        "{:?}",
        em.weights
    );
    let avg = average(&lam.field);
    assert!(avg.norm() <= 1e-10);
    let suite = polynomial_test_suite(&lam.field.partition.domain);
    for r in relative_div_residuals(&lam.field, &suite).unwrap() {
        assert!(r <= 1e-10);
    }
}

#[test]
fn skewed_laminate_keeps_its_average_and_weights() {
    let (a, b) = (row(&[1.0, 0.0]), row(&[-1.0, 0.0]));
    let theta = 0.3;
    let tau = 0.05;
    let spec = LaminateSpec::new(a.clone(), b.clone(), theta, 0.1).unwrap();
    let lam = build_laminate(&spec, &Polytope::unit_cube(2), tau).unwrap();
    let f = spec.average();
    let avg = average(&lam.field);
    assert!(avg.mat.sub(&f).max_abs() <= 1e-10 * (1.0 + f.max_abs()));
    let em = empirical_measure(&lam.field, &[Value::new(a), Value::new(b)], 0.1).unwrap();
    assert!((em.weights[0] - theta).abs() <= tau + 1e-9, "{:?}", em.weights);
    assert!((em.weights[1] - (1.0 - theta)).abs() <= tau + 1e-9, "{:?}", em.weights);
}

#[test]
fn laminate_in_three_dimensions_with_a_rank_two_difference() {
    let a = Mat::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let b = Mat::zeros(2, 3);
    let spec = LaminateSpec::new(a, b, 0.5, 0.5).unwrap();
    let lam = build_laminate(&spec, &Polytope::unit_cube(3), 0.3).unwrap();
    let avg = average(&lam.field);
    assert!(avg.mat.sub(&spec.average()).max_abs() <= 1e-10);
    let suite = polynomial_test_suite(&lam.field.partition.domain);
    for r in relative_div_residuals(&lam.field, &suite).unwrap() {
        assert!(r <= 1e-10);
    }
}

fn bi_average(v: &Value) -> Point10 {
    let f = v.flatten();
    Point10::from_slice(&f)
}

#[test]
fn born_infeld_laminate_between_parallel_states() {
    let s = 2f64.sqrt();
    let m = Point10::new([1.0, 0.0, 0.0], [s, 0.0, 0.0], [0.0; 3], 2.0);
    let n = Point10::new([1.0, 0.0, 0.0], [-s, 0.0, 0.0], [0.0; 3], 2.0);
    assert_eq!(defect(&m), (0.0, 0.0));
    assert_eq!(defect(&n), (0.0, 0.0));
    let spec = BILaminateSpec {
        m,
        n,
        theta: 0.5,
        delta: 0.4,
    };
    assert_eq!(spec.average(), Point10::new([1.0, 0.0, 0.0], [0.0; 3], [0.0; 3], 2.0));
    let lam = build_bi_laminate(&spec, &Polytope::unit_cube(3), 0.5).unwrap();
    let avg = bi_average(&average(&lam.field));
    assert!(avg.dist(&spec.average()) <= 1e-10 * 2.0, "{avg:?}");
    let suite = polynomial_test_suite(&lam.field.partition.domain);
    for r in relative_div_residuals(&lam.field, &suite).unwrap() {
        assert!(r <= 1e-10);
    }
}

#[test]
fn asymmetric_born_infeld_laminate_corrects_its_average() {
    let m = lift([0.5, 0.0, 0.0], [0.0, 0.3, 0.0]);
    let n = lift([-0.5, 0.0, 0.0], [0.0, 0.0, 0.2]);
    let tau = 0.5;
    let spec = BILaminateSpec {
        m,
        n,
        theta: 0.25,
        delta: 0.4,
    };
    let lam = build_bi_laminate(&spec, &Polytope::unit_cube(3), tau).unwrap();
    // Each diamond carries exactly θ of its volume in the M phase.
    assert!((lam.eta - 0.25).abs() <= 1e-9, "eta {}", lam.eta);
    let avg = bi_average(&average(&lam.field));
    let f = spec.average();
    assert!(avg.dist(&f) <= 1e-10 * (1.0 + f.norm()), "{avg:?} vs {f:?}");
}

#[test]
fn equal_field_blocks_use_flat_slabs() {
    let m = Point10::new([0.1, 0.0, 0.0], [0.0; 3], [0.0, 0.0, 0.5], 2.0);
    let n = Point10::new([0.1, 0.0, 0.0], [0.0; 3], [0.0, 0.0, -0.5], 3.0);
    let spec = BILaminateSpec {
        m,
        n,
        theta: 0.3,
        delta: 0.1,
    };
    let lam = build_bi_laminate(&spec, &Polytope::unit_cube(3), 0.05).unwrap();
    assert!(lam.inner.is_none());
    assert!((lam.eta - 0.3).abs() < 1e-12);
    let avg = bi_average(&average(&lam.field));
    assert!(avg.dist(&spec.average()) <= 1e-12);
}
