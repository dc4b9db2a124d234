//! The Born-Infeld manifold `𝓜 = {(D, B, D∧B, √(1+|D|²+|B|²+|D∧B|²))}` in R^10:
//! lifts, defects, hull bounds and explicit decompositions of points of its
//! convex hull into at most eight points of `𝓜`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm, wedge, Point10};
use crate::{Error, Result};

/// Tolerance for the invariants of a decomposition.
pub const DECOMP_TOL: f64 = 1e-9;

/// The point of `𝓜` above `(D, B)`.
pub fn lift(d: [f64; 3], b: [f64; 3]) -> Point10 {
    let p = wedge(d, b);
    let h = (1.0 + dot(&d, &d) + dot(&b, &b) + dot(&p, &p)).sqrt();
    Point10::new(d, b, p, h)
}

/// The pair `(|P − D∧B|, |h − √(1+|D|²+|B|²+|P|²)|)`, zero exactly on `𝓜`.
pub fn defect(x: &Point10) -> (f64, f64) {
    let w = wedge(x.d, x.b);
    let dp = norm(&[x.p[0] - w[0], x.p[1] - w[1], x.p[2] - w[2]]);
    let dh = (x.h - energy(x)).abs();
    (dp, dh)
}

fn energy(x: &Point10) -> f64 {
    (1.0 + dot(&x.d, &x.d) + dot(&x.b, &x.b) + dot(&x.p, &x.p)).sqrt()
}

/// Classification of a point against the known bounds of `conv 𝓜`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HullStatus {
    /// Inside by the inner bound.
    Inside,
    /// Outside by the outer or the sharper bound.
    Outside,
    /// Between the inner bound and the sharper bound.
    Unknown,
}

/// Flags and slacks of the three hull bounds. A slack is nonnegative exactly
/// when the bound holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullBounds {
    /// `h ≥ 1 + |D| + |B| + |P|`, sufficient for membership.
    pub inner: bool,
    /// `h² ≥ 1 + |D|² + |B|² + |P|²`, necessary.
    pub outer: bool,
    /// `h² ≥ 1 + |D|² + |B|² + |P|² + 2√(|P−D∧B|² + (P·D)² + (P·B)²)`, necessary.
    pub serre: bool,
    pub inner_slack: f64,
    pub outer_slack: f64,
    pub serre_slack: f64,
    pub status: HullStatus,
}

/// Evaluates the inner, outer and sharper bounds at `x`. Comparisons allow a
/// relative rounding slack of `1e-12`.
pub fn check_hull_bounds(x: &Point10) -> HullBounds {
    let nd = norm(&x.d);
    let nb = norm(&x.b);
    let np = norm(&x.p);
    let base = 1.0 + nd * nd + nb * nb + np * np;
    let w = wedge(x.d, x.b);
    let r2 = (x.p[0] - w[0]).powi(2)
        + (x.p[1] - w[1]).powi(2)
        + (x.p[2] - w[2]).powi(2)
        + dot(&x.p, &x.d).powi(2)
        + dot(&x.p, &x.b).powi(2);
    let inner_slack = x.h - (1.0 + nd + nb + np);
    let h2 = x.h * x.h * x.h.signum();
    let outer_slack = h2 - base;
    let serre_slack = h2 - base - 2.0 * r2.sqrt();
    let tol = 1e-12 * (1.0 + base + 2.0 * r2.sqrt());
    let inner = inner_slack >= -1e-12 * (1.0 + x.h.abs());
    let outer = outer_slack >= -tol;
    let serre = serre_slack >= -tol;
    let status = if inner {
        HullStatus::Inside
    } else if !outer || !serre {
        HullStatus::Outside
    } else {
        HullStatus::Unknown
    };
    HullBounds {
        inner,
        outer,
        serre,
        inner_slack,
        outer_slack,
        serre_slack,
        status,
    }
}

/// Coordinate block of R^10 carrying one of the three vector fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    D,
    B,
    P,
}

/// A convex combination of points of `𝓜`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MDecomposition {
    pub atoms: Vec<Point10>,
    pub weights: Vec<f64>,
}

impl MDecomposition {
    pub fn barycenter(&self) -> Point10 {
        let mut acc = [0.0; 10];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for (s, v) in acc.iter_mut().zip(a.to_array()) {
                *s += w * v;
            }
        }
        Point10::from_array(acc)
    }

    pub fn max_defect(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let (dp, dh) = defect(a);
                dp.max(dh)
            })
            .fold(0.0, f64::max)
    }

    /// Re-verifies atom count, atom defects, weight simplex and barycenter
    /// against `target`.
    pub fn certify(&self, target: &Point10) -> Result<()> {
        if self.atoms.is_empty() || self.atoms.len() > 8 || self.atoms.len() != self.weights.len() {
            return Err(Error::Certificate(format!(
                "decomposition has {} atoms",
                self.atoms.len()
            )));
        }
        let md = self.max_defect();
        if md > DECOMP_TOL * (1.0 + target.norm()) {
            return Err(Error::Certificate(format!("atom defect {md:.3e}")));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Certificate("negative weight".into()));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Certificate(format!("weights sum to {s}")));
        }
        let err = self.barycenter().dist(target);
        if err > DECOMP_TOL * (1.0 + target.norm()) {
            return Err(Error::Certificate(format!("reconstruction error {err:.3e}")));
        }
        Ok(())
    }
}

/// Unit vector orthogonal to the unit `u`, built from the coordinate axis
/// along which `u` is smallest (lowest index on ties).
fn orthonormal_complement(u: [f64; 3]) -> [f64; 3] {
    let mut k = 0;
    for i in 1..3 {
        if u[i].abs() < u[k].abs() {
            k = i;
        }
    }
    let mut e = [0.0; 3];
    e[k] = 1.0;
    let c = dot(&e, &u);
    let mut d = [e[0] - c * u[0], e[1] - c * u[1], e[2] - c * u[2]];
    let nd = norm(&d);
    for x in d.iter_mut() {
        *x /= nd;
    }
    d
}

fn scaled(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Splits the axis point carrying `v` (with `|v| = s − 1`) in block `axis`
/// and energy `s` into two points of `𝓜` with weights `(½, ½)`.
pub fn decompose_axis_point(axis: Axis, v: [f64; 3], s: f64) -> Result<MDecomposition> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!("axis point needs s > 1, got {s}")));
    }
    let nv = norm(&v);
    if (nv - (s - 1.0)).abs() > 1e-10 * (1.0 + s) {
        return Err(Error::InvalidParameter(format!(
            "axis vector has norm {nv}, expected {}",
            s - 1.0
        )));
    }
    let zero = [0.0; 3];
    let atoms = match axis {
        Axis::D | Axis::B => {
            let rest = s * s - 1.0 - nv * nv;
            if !(rest > 0.0) {
                return Err(Error::Certificate(format!(
                    "no real splitting amplitude: s² − 1 − |v|² = {rest}"
                )));
            }
            let alpha = (rest / (nv * nv)).sqrt();
            let w = scaled(v, alpha);
            let wm = scaled(v, -alpha);
            match axis {
                Axis::D => vec![Point10::new(v, w, zero, s), Point10::new(v, wm, zero, s)],
                _ => vec![Point10::new(w, v, zero, s), Point10::new(wm, v, zero, s)],
            }
        }
        Axis::P => {
            let u = scaled(v, 1.0 / nv);
            let d = orthonormal_complement(u);
            let b = wedge(u, d);
            let r = (s - 1.0).sqrt();
            vec![
                Point10::new(scaled(d, r), scaled(b, r), v, s),
                Point10::new(scaled(d, -r), scaled(b, -r), v, s),
            ]
        }
    };
    Ok(MDecomposition {
        atoms,
        weights: vec![0.5, 0.5],
    })
}

/// Decomposes a point satisfying the inner bound into at most eight points of
/// `𝓜`: one axis pair per nonzero block with weight `|a|/(s−1)`, and a pair
/// `(±λe1, ±λe1, 0, s)`, `λ = √((s²−1)/2)`, carrying the remaining weight.
pub fn decompose_to_m(x: &Point10) -> Result<MDecomposition> {
    if !x.is_finite() {
        return Err(Error::NonFinite("decomposition target"));
    }
    let s = x.h;
    let blocks = [(Axis::D, x.d), (Axis::B, x.b), (Axis::P, x.p)];
    let sigma: f64 = blocks.iter().map(|(_, v)| norm(v)).sum();
    let slack = s - 1.0 - sigma;
    let tol = 1e-12 * (1.0 + s.abs());
    if slack < -tol {
        return Err(Error::OutsideInnerBound(slack));
    }
    let zero = [0.0; 3];
    if s - 1.0 <= tol {
        let out = MDecomposition {
            atoms: vec![Point10::new(zero, zero, zero, 1.0)],
            weights: vec![1.0],
        };
        out.certify(x)?;
        return Ok(out);
    }
    let mut atoms = Vec::with_capacity(8);
    let mut weights = Vec::with_capacity(8);
    for (axis, v) in blocks {
        let nv = norm(&v);
        if nv == 0.0 {
            continue;
        }
        let w = nv / (s - 1.0);
        let pair = decompose_axis_point(axis, scaled(v, (s - 1.0) / nv), s)?;
        for a in pair.atoms {
            atoms.push(a);
            weights.push(0.5 * w);
        }
    }
    let center = (1.0 - sigma / (s - 1.0)).max(0.0);
    if center > 0.0 {
        let lam = ((s * s - 1.0) / 2.0).sqrt();
        let e = [lam, 0.0, 0.0];
        let em = [-lam, 0.0, 0.0];
        atoms.push(Point10::new(e, e, zero, s));
        atoms.push(Point10::new(em, em, zero, s));
        weights.push(0.5 * center);
        weights.push(0.5 * center);
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    let out = MDecomposition { atoms, weights };
    out.certify(x)?;
    Ok(out)
}

/// Empirical ratio `max defect / η` over points of `𝓜` with `|D|, |B| ≤ radius`
/// perturbed by vectors of norm `η`. No a-priori modulus is known; the value
/// is reported, never assumed.
pub fn defect_modulus_estimate(radius: f64, eta: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let v3 = |rng: &mut ChaCha8Rng| {
            let mut v = [0.0; 3];
            for x in v.iter_mut() {
                *x = rng.gen_range(-radius..radius);
            }
            v
        };
        let d = v3(&mut rng);
        let b = v3(&mut rng);
        let base = lift(d, b).to_array();
        let mut dir = [0.0; 10];
        for x in dir.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let nd = norm(&dir);
        let mut pert = base;
        for (p, q) in pert.iter_mut().zip(dir) {
            *p += eta * q / nd;
        }
        let (dp, dh) = defect(&Point10::from_array(pert));
        worst = worst.max(dp.max(dh) / eta);
    }
    worst
}
