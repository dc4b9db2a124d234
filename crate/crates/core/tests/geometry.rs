use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solenoid_core::domains::{diamond, diamond_volume, vitali_fill, DiamondCell, Located};
use solenoid_core::geometry::{Polytope, Simplex, SimplexRule};
use solenoid_core::linalg::{
    caratheodory_prune, dot, hull_membership, interior_margin, null_direction, rank_with_tol, wedge, MarginFlag, Mat,
};

#[test]
fn wedge_matches_cofactor_expansion() {
    assert_eq!(wedge([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]), [-3.0, 6.0, -3.0]);
}

#[test]
fn sum_of_two_outer_products_has_rank_two() {
    let (u, w) = ([1.0, 2.0], [0.0, 1.0]);
    let (v, z) = ([1.0, 0.0, 2.0], [0.0, 3.0, 1.0]);
    let data: Vec<f64> = (0..2)
        .flat_map(|i| (0..3).map(move |j| u[i] * v[j] + w[i] * z[j]))
        .collect();
    let m = Mat::new(2, 3, data).unwrap();
    assert_eq!(rank_with_tol(&m, 1e-10), 2);
}

#[test]
fn null_direction_of_rank_two_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let r: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let m = Mat::from_rows(&r).unwrap();
        let v = null_direction(&m).unwrap();
        let c = wedge([r[0][0], r[0][1], r[0][2]], [r[1][0], r[1][1], r[1][2]]);
        let nc = dot(&c, &c).sqrt();
        // Parallel to the cross product of the rows.
        let cos = dot(&v, &c).abs() / (nc * dot(&v, &v).sqrt());
        assert!((cos - 1.0).abs() < 1e-12);
        for row in &r {
            assert!(dot(row, &v).abs() <= 1e-12);
        }
    }
}

#[test]
fn membership_inside_and_outside_a_triangle() {
    let atoms = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let inside = hull_membership(&[0.2, 0.3], &atoms, 1e-9).unwrap();
    assert!(inside.feasible);
    assert!(inside.residual <= 1e-12);
    let outside = hull_membership(&[1.0, 1.0], &atoms, 1e-9).unwrap();
    assert!(!outside.feasible);
    let d = outside.separating.unwrap();
    let dp = dot(&d, &[1.0, 1.0]);
    assert!(atoms.iter().all(|a| dot(&d, a) < dp));
    assert!(outside.separation_gap > 0.0);
}

#[test]
fn cube_center_margin_is_half_side_over_sqrt_d() {
    for d in [2usize, 3, 4] {
        let a = 0.7;
        let atoms: Vec<Vec<f64>> = (0..1usize << d)
            .map(|m| (0..d).map(|k| if m >> k & 1 == 1 { a } else { -a }).collect())
            .collect();
        let (margin, flag) = interior_margin(&vec![0.0; d], &atoms).unwrap();
        assert_eq!(flag, MarginFlag::Interior);
        assert!((margin - a / (d as f64).sqrt()).abs() < 1e-9, "d={d}: {margin}");
    }
}

#[test]
fn polytope_volumes() {
    assert!((Polytope::unit_cube(3).volume() - 1.0).abs() < 1e-14);
    assert!((Polytope::standard_simplex(3).volume() - 1.0 / 6.0).abs() < 1e-14);
    let c = Polytope::cuboid(&[-1.0, 0.0], &[1.0, 0.5]).unwrap();
    assert!((c.volume() - 1.0).abs() < 1e-14);
}

#[test]
fn simplex_rule_integrates_monomials_exactly() {
    // ∫ over the unit triangle of x^a y^b = a! b! / (a + b + 2)!.
    let fact = |k: u32| (1..=k).map(|x| x as f64).product::<f64>();
    let tri = Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    for deg in 0..=7u32 {
        let rule = SimplexRule::new(2, deg as usize);
        for a in 0..=deg {
            let b = deg - a;
            let got = tri.integrate(&rule, |x| x[0].powi(a as i32) * x[1].powi(b as i32));
            let want = fact(a) * fact(b) / fact(a + b + 2);
            assert!((got - want).abs() < 1e-14, "x^{a} y^{b}: {got} vs {want}");
        }
    }
}

#[test]
fn diamond_area_in_the_plane_is_one() {
    let d = diamond(2, 1.0, 0.5).unwrap();
    // Shoelace on (0,0), (1,½), (0,1), (−1,½).
    let v = [[0.0, 0.0], [1.0, 0.5], [0.0, 1.0], [-1.0, 0.5]];
    let shoelace: f64 = (0..4)
        .map(|i| v[i][0] * v[(i + 1) % 4][1] - v[(i + 1) % 4][0] * v[i][1])
        .sum::<f64>()
        / 2.0;
    assert!((shoelace - 1.0).abs() < 1e-15);
    assert!((d.volume() - shoelace).abs() < 1e-12);
    assert!((diamond_volume(2, 1.0) - 1.0).abs() < 1e-15);
}

#[test]
fn diamond_volume_in_space_is_independent_of_theta() {
    for theta in [0.3, 0.5, 0.7] {
        let d = diamond(3, 1.0, theta).unwrap();
        assert!((d.volume() - 2.0 / 3.0).abs() < 1e-12, "theta {theta}: {}", d.volume());
        let waist: Vec<f64> = d
            .vertices()
            .iter()
            .filter(|v| v[0].abs() == 1.0)
            .map(|v| v[2])
            .collect();
        assert!(!waist.is_empty());
        assert!(waist.iter().all(|h| (h - theta).abs() < 1e-15));
    }
    assert!((diamond_volume(3, 1.0) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn diamond_rejects_bad_parameters() {
    assert!(diamond(1, 1.0, 0.5).is_err());
    assert!(diamond(2, 1.0, 1.0).is_err());
    assert!(diamond(2, 0.0, 0.5).is_err());
}

#[test]
fn fill_of_the_unit_square_meets_its_budget() {
    let target = Polytope::unit_cube(2);
    let proto = DiamondCell::axis_aligned(2, 1.0, 0.5).unwrap();
    let cx = vitali_fill(&target, &proto, 0.2).unwrap();
    assert!(cx.uncovered_volume <= 0.2 * target.volume() + 1e-12);
    let covered: f64 = (0..cx.len()).map(|i| cx.copy_volume(i)).sum();
    assert!((covered + cx.uncovered_volume - 1.0).abs() < 1e-9);
    // Monte-Carlo volume of the union against the bookkept covered volume.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200_000;
    let mut hits = 0usize;
    for _ in 0..n {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        if let Located::Cell(_) = cx.locate(&x).unwrap() {
            hits += 1;
        }
    }
    assert!((hits as f64 / n as f64 - covered).abs() < 1e-2);
}

#[test]
fn locate_agrees_with_brute_force_containment() {
    let target = Polytope::unit_cube(2);
    let proto = DiamondCell::axis_aligned(2, 1.0, 0.5).unwrap();
    let cx = vitali_fill(&target, &proto, 0.1).unwrap();
    let polys: Vec<Polytope> = (0..cx.len()).map(|i| cx.copy_polytope(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let brute: Vec<usize> = (0..polys.len()).filter(|&i| polys[i].depth(&x) > 1e-9).collect();
        assert!(brute.len() <= 1, "copies overlap at {x:?}");
        match cx.locate(&x).unwrap() {
            Located::Cell(i) => assert!(polys[i].contains(&x, 1e-9)),
            Located::Residual => assert!(brute.is_empty(), "{x:?} lies in copy {:?}", brute),
        }
    }
}

fn simplex_atoms(d: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (
        prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), d + 3),
        prop::collection::vec(0.01..1.0f64, d + 3),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convex_combinations_are_members((atoms, raw) in simplex_atoms(4)) {
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let p: Vec<f64> = (0..4).map(|k| atoms.iter().zip(&w).map(|(a, wi)| a[k] * wi).sum()).collect();
        let res = hull_membership(&p, &atoms, 1e-9).unwrap();
        prop_assert!(res.feasible);
        prop_assert!(res.residual <= 1e-9);
        prop_assert!((res.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(res.weights.iter().all(|&x| x >= 0.0));
        let pruned = caratheodory_prune(&p, &atoms, &res.weights).unwrap();
        prop_assert!(pruned.len() <= 5);
    }

    #[test]
    fn wedge_is_orthogonal_and_antisymmetric(
        u in prop::array::uniform3(-10.0..10.0f64),
        v in prop::array::uniform3(-10.0..10.0f64),
    ) {
        let w = wedge(u, v);
        let scale = 1.0 + dot(&u, &u) * dot(&v, &v).sqrt();
        prop_assert!(dot(&w, &u).abs() <= 1e-12 * scale * 10.0);
        prop_assert!(dot(&w, &v).abs() <= 1e-12 * scale * 10.0);
        let r = wedge(v, u);
        for k in 0..3 {
            prop_assert_eq!(w[k], -r[k]);
        }
    }
}
