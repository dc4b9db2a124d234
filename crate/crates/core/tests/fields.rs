use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solenoid_core::fields::{
    apply_l, average, empirical_measure, mollification_gap, polynomial_test_suite, relative_div_residuals,
    weak_div_residual, AffineSkew, Partition, PiecewiseConstantField, PiecewisePotential, SkewStack, Value,
};
use solenoid_core::geometry::Polytope;
use solenoid_core::poly::Poly;
use solenoid_core::Mat;

fn row(v: &[f64]) -> Mat {
    Mat::new(1, v.len(), v.to_vec()).unwrap()
}

fn halves() -> Arc<Partition> {
    let domain = Polytope::unit_cube(2);
    let cells = vec![
        Polytope::cuboid(&[0.0, 0.0], &[0.5, 1.0]).unwrap(),
        Polytope::cuboid(&[0.5, 0.0], &[1.0, 1.0]).unwrap(),
    ];
    Arc::new(Partition::from_polytopes(domain, cells).unwrap())
}

#[test]
fn linear_potential_gives_the_last_row_of_its_gradient() {
    let n = 3;
    let s = Mat::from_rows(&[vec![0.0, 1.0, -2.0], vec![-1.0, 0.0, 3.0], vec![2.0, -3.0, 0.0]]).unwrap();
    let mut g = AffineSkew::zeros(1, n);
    g.grad[n - 1] = SkewStack::from_mats(&[s.clone()]).unwrap();
    let l = g.apply_l();
    for j in 0..n {
        assert_eq!(l.get(0, j), s.get(n - 1, j));
    }
}

#[test]
fn skew_stack_rejects_non_skew_blocks() {
    let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert!(SkewStack::from_mats(&[a]).is_err());
}

#[test]
fn broken_field_residual_is_the_interface_integral() {
    let part = halves();
    let (a, b) = ([1.0, 0.0], [-1.0, 0.0]);
    let values = part
        .owner
        .iter()
        .map(|&c| Value::new(row(if c == 0 { &a } else { &b })))
        .collect();
    let field = PiecewiseConstantField::new(part, values, Value::new(row(&[0.0, 0.0]))).unwrap();
    let phi = Poly::box_bubble(&[0.0, 0.0], &[1.0, 1.0]);
    // (A − B)·e1 · ∫_{x=½} φ dy = 2 · ¼ · ⅙.
    let want = 2.0 / 24.0;
    let got = weak_div_residual(&field, &phi).unwrap();
    assert!((got[0] - want).abs() < 1e-10, "{got:?}");
}

#[test]
fn continuous_normal_component_has_no_residual() {
    let part = halves();
    let (a, b) = ([1.0, 2.0], [1.0, -3.0]);
    let values = part
        .owner
        .iter()
        .map(|&c| Value::new(row(if c == 0 { &a } else { &b })))
        .collect();
    let field = PiecewiseConstantField::new(part, values, Value::new(row(&[0.0, 0.0]))).unwrap();
    let suite = polynomial_test_suite(&field.partition.domain);
    for r in relative_div_residuals(&field, &suite).unwrap() {
        assert!(r <= 1e-14, "{r}");
    }
}

/// `G_12 = g(x_1)` with `g` the tent peaking at `x_1 = ½`, so `L(G) = (0, ±1)`
/// with a single jump across `x_1 = ½`.
fn tent_potential() -> PiecewisePotential {
    let part = halves();
    let maps = part
        .owner
        .iter()
        .map(|&c| {
            let mut g = AffineSkew::zeros(1, 2);
            if c == 0 {
                g.grad[0].set(0, 0, 1, 1.0);
            } else {
                g.c0.set(0, 0, 1, 1.0);
                g.grad[0].set(0, 0, 1, -1.0);
            }
            g
        })
        .collect();
    PiecewisePotential::new(part, 1, maps).unwrap()
}

#[test]
fn mollification_gap_matches_the_strip_oracle() {
    let pot = tent_potential();
    let region = Polytope::cuboid(&[0.25, 0.25], &[0.75, 0.75]).unwrap();
    let mut last = f64::INFINITY;
    for k in 2..=5 {
        let eps = 0.5f64.powi(k);
        let g = mollification_gap(&pot, eps, eps / 8.0, &region).unwrap();
        // Jump of height 2 against a hat of radius ε over an interface of
        // length ½: 2 · 2 · (ε/6) · ½ = ε/3.
        assert!((g.gap - eps / 3.0).abs() <= 0.05 * eps / 3.0, "eps {eps}: {}", g.gap);
        // Strip bound 2‖L(H)‖∞ · vol{dist < ε}.
        assert!(g.gap <= 2.0 * 1.0 * (2.0 * eps * 0.5));
        assert!(g.gap < last);
        last = g.gap;
    }
}

#[test]
fn mollification_rejects_coarse_grids() {
    let pot = tent_potential();
    assert!(mollification_gap(&pot, 0.1, 0.1, &Polytope::unit_cube(2)).is_err());
}

#[test]
fn apply_l_field_is_weakly_divergence_free() {
    let field = apply_l(&tent_potential());
    let suite = polynomial_test_suite(&field.partition.domain);
    for r in relative_div_residuals(&field, &suite).unwrap() {
        assert!(r <= 1e-12, "{r}");
    }
}

#[test]
fn empirical_measure_of_halves() {
    let part = halves();
    let (a, b) = ([1.0, 0.0], [-1.0, 0.0]);
    let values = part
        .owner
        .iter()
        .map(|&c| Value::new(row(if c == 0 { &a } else { &b })))
        .collect();
    let field = PiecewiseConstantField::new(part, values, Value::new(row(&[0.0, 0.0]))).unwrap();
    let em = empirical_measure(&field, &[Value::new(row(&a)), Value::new(row(&b))], 0.1).unwrap();
    assert!((em.weights[0] - 0.5).abs() < 1e-12 && (em.weights[1] - 0.5).abs() < 1e-12);
    assert!(em.unassigned < 1e-12);
    assert!(empirical_measure(&field, &[Value::new(row(&a)), Value::new(row(&a))], 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Any piecewise-affine potential vanishing on each cell outline yields a
    /// field with zero weak divergence. Built as `G_12 = c·λ(x)` with `λ` the
    /// barycentric hat of a triangle fan around an interior vertex.
    #[test]
    fn fan_potentials_are_divergence_free(c in -5.0..5.0f64, px in 0.2..0.8f64, py in 0.2..0.8f64) {
        use solenoid_core::geometry::Simplex;
        let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mut pieces = Vec::new();
        for i in 0..4 {
            let (u, v) = (corners[i], corners[(i + 1) % 4]);
            pieces.push(Simplex::new(vec![vec![px, py], u.to_vec(), v.to_vec()]));
        }
        let part = Arc::new(Partition::new(Polytope::unit_cube(2), vec![(Polytope::unit_cube(2), pieces.clone())]).unwrap());
        let maps = pieces.iter().map(|s| {
            // λ = 1 at p, 0 on the edge uv.
            let (p, u, v) = (&s.vertices[0], &s.vertices[1], &s.vertices[2]);
            let e = [v[0] - u[0], v[1] - u[1]];
            let nrm = [-e[1], e[0]];
            let h = nrm[0] * (p[0] - u[0]) + nrm[1] * (p[1] - u[1]);
            let mut g = AffineSkew::zeros(1, 2);
            g.c0.set(0, 0, 1, -c * (nrm[0] * u[0] + nrm[1] * u[1]) / h);
            g.grad[0].set(0, 0, 1, c * nrm[0] / h);
            g.grad[1].set(0, 0, 1, c * nrm[1] / h);
            g
        }).collect();
        let pot = PiecewisePotential::new(part, 1, maps).unwrap();
        let field = apply_l(&pot);
        let suite = polynomial_test_suite(&field.partition.domain);
        for r in relative_div_residuals(&field, &suite).unwrap() {
            prop_assert!(r <= 1e-10, "{}", r);
        }
        let avg = average(&field);
        prop_assert!(avg.norm() <= 1e-12 * (1.0 + c.abs() * 10.0));
    }
}

#[test]
fn average_of_shifted_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let part = halves();
    let values: Vec<Value> = part
        .owner
        .iter()
        .map(|_| Value::new(row(&[rng.gen(), rng.gen()])))
        .collect();
    let field = PiecewiseConstantField::new(part, values, Value::new(row(&[0.0, 0.0]))).unwrap();
    let base = average(&field);
    let c = Value::new(row(&[0.25, -2.0]));
    let shifted = average(&field.shifted(&c));
    for j in 0..2 {
        assert!((shifted.mat.get(0, j) - base.mat.get(0, j) - c.mat.get(0, j)).abs() < 1e-14);
    }
}
