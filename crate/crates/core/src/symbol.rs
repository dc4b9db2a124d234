//! The first-order operator `𝒜(V) = (div D, div B)` on R^10-valued fields:
//! its coefficient matrices, symbol, constant-rank check and wave-cone
//! witnesses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm, rank_with_tol, wedge, Mat, Point10};

/// Coefficient matrix `A^{(i)}` (2×10) of `∂_i` in `𝒜`, for `i ∈ {0, 1, 2}`.
pub fn coefficient(i: usize) -> Mat {
    assert!(i < 3, "coefficient index {i} out of range");
    let mut a = Mat::zeros(2, 10);
    a.set(0, i, 1.0);
    a.set(1, 3 + i, 1.0);
    a
}

/// The symbol `𝔸(w) = Σ_i A^{(i)} w_i`.
pub fn symbol(w: [f64; 3]) -> Mat {
    let mut a = Mat::zeros(2, 10);
    for i in 0..3 {
        a.set(0, i, w[i]);
        a.set(1, 3 + i, w[i]);
    }
    a
}

/// Outcome of sampling the symbol over the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantRankReport {
    pub samples: usize,
    /// Sampled directions whose symbol rank differed from 2, with that rank.
    pub failures: Vec<([f64; 3], usize)>,
}

impl ConstantRankReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Samples `samples` uniform unit directions (normalized Gaussians) plus the
/// three coordinate axes and checks `rank 𝔸(w) = 2` for each.
pub fn constant_rank_check(samples: usize, seed: u64) -> ConstantRankReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<[f64; 3]> = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    while dirs.len() < samples.max(1) + 3 {
        let g: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let ng = norm(&g);
        if ng < 1e-8 {
            continue;
        }
        dirs.push([g[0] / ng, g[1] / ng, g[2] / ng]);
    }
    let failures = dirs
        .into_iter()
        .filter_map(|w| {
            let r = rank_with_tol(&symbol(w), 1e-10);
            (r != 2).then_some((w, r))
        })
        .collect();
    ConstantRankReport {
        samples: samples.max(1) + 3,
        failures,
    }
}

/// Dimension of `ker 𝔸(w)` for a nonzero `w`.
pub fn kernel_dim(w: [f64; 3]) -> usize {
    10 - rank_with_tol(&symbol(w), 1e-10)
}

/// Unit `w` with `𝔸(w)v = 0`. With `u` the larger of `D`, `B` normalized and
/// `e` the normalized part of the other orthogonal to `u`, `w = ±u × e`,
/// oriented along `D × B`; this is the normalized `D × B` when the blocks are
/// independent. When the other block is parallel to `u`, `w` is the canonical
/// unit vector orthogonal to `u`, and `e1` when both blocks vanish.
pub fn wave_cone_witness(v: &Point10) -> [f64; 3] {
    let nd = norm(&v.d);
    let nb = norm(&v.b);
    let (u, other, nu, flip) = if nd >= nb {
        (v.d, v.b, nd, 1.0)
    } else {
        (v.b, v.d, nb, -1.0)
    };
    if nu == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let u = [u[0] / nu, u[1] / nu, u[2] / nu];
    let c = dot(&other, &u);
    let perp = [other[0] - c * u[0], other[1] - c * u[1], other[2] - c * u[2]];
    let np = norm(&perp);
    if np > 0.0 {
        let e = [perp[0] / np, perp[1] / np, perp[2] / np];
        let w = wedge(u, e);
        let nw = norm(&w);
        return [flip * w[0] / nw, flip * w[1] / nw, flip * w[2] / nw];
    }
    let mut k = 0;
    for i in 1..3 {
        if u[i].abs() < u[k].abs() {
            k = i;
        }
    }
    let mut e = [0.0; 3];
    e[k] = 1.0;
    let c = u[k];
    let mut w = [e[0] - c * u[0], e[1] - c * u[1], e[2] - c * u[2]];
    let nw = norm(&w);
    for x in w.iter_mut() {
        *x /= nw;
    }
    w
}

/// `|𝔸(w)v|`.
pub fn symbol_residual(w: [f64; 3], v: &Point10) -> f64 {
    norm(&symbol(w).mul_vec(&v.to_array()))
}

/// Outcome of checking wave-cone witnesses on random vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub samples: usize,
    /// Largest `|𝔸(w)v| / (1 + |v|)`.
    pub max_relative_residual: f64,
    /// Largest `| |w| − 1 |`.
    pub max_norm_error: f64,
}

/// Checks [`wave_cone_witness`] on `samples` Gaussian vectors of scale
/// `1`–`100` plus degenerate cases (parallel and vanishing blocks).
pub fn witness_check(samples: usize, seed: u64) -> WitnessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vs = vec![
        Point10::default(),
        Point10::new([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0; 3], 2.0),
        Point10::new([0.0; 3], [0.0, 0.0, 5.0], [1.0; 3], 1.0),
    ];
    while vs.len() < samples.max(1) + 3 {
        let scale = 10f64.powf(2.0 * rand::Rng::gen::<f64>(&mut rng));
        let a: [f64; 10] = std::array::from_fn(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            scale * g
        });
        vs.push(Point10::from_array(a));
    }
    let mut worst: f64 = 0.0;
    let mut norm_err: f64 = 0.0;
    for v in &vs {
        let w = wave_cone_witness(v);
        worst = worst.max(symbol_residual(w, v) / (1.0 + v.norm()));
        norm_err = norm_err.max((norm(&w) - 1.0).abs());
    }
    WitnessReport {
        samples: vs.len(),
        max_relative_residual: worst,
        max_norm_error: norm_err,
    }
}
