//! Simple laminates supported on diamond cells, with an explicit potential
//! that vanishes on every cell boundary, and their lift to the ten
//! Born-Infeld variables.

use std::sync::Arc;

use crate::domains::{vitali_fill_with, CellComplex, DiamondCell, FillOptions};
use crate::error::{Error, Result};
use crate::fields::{apply_l, AffineSkew, Partition, PiecewiseConstantField, PiecewisePotential, SkewStack, Value};
use crate::geometry::{Polytope, Simplex};
use crate::linalg::{null_direction, rank_with_tol, Mat, Point10};

/// Guard on the volume fraction: `θ(1−θ) ≥ θ_min(1−θ_min)`.
pub const THETA_MIN: f64 = 1e-3;

/// Two rank-one-compatible states, their weight, the tolerance and the frame
/// in which `(A−B)Qe_n = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaminateSpec {
    pub a: Mat,
    pub b: Mat,
    pub theta: f64,
    pub delta: f64,
    pub frame: Mat,
}

impl LaminateSpec {
    /// Validates the data and computes the frame with [`split_frame`].
    pub fn new(a: Mat, b: Mat, theta: f64, delta: f64) -> Result<Self> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::Dimension("A and B must have the same shape".into()));
        }
        if a.data().iter().chain(b.data()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("laminate states"));
        }
        if !(theta > 0.0 && theta < 1.0) || theta * (1.0 - theta) < THETA_MIN * (1.0 - THETA_MIN) {
            return Err(Error::InvalidParameter(format!(
                "theta = {theta} outside [{THETA_MIN}, {}]",
                1.0 - THETA_MIN
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta = {delta} must be positive")));
        }
        let frame = split_frame(&a, &b)?;
        Ok(LaminateSpec {
            a,
            b,
            theta,
            delta,
            frame,
        })
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// `F = θA + (1−θ)B`.
    pub fn average(&self) -> Mat {
        self.a.scale(self.theta).add(&self.b.scale(1.0 - self.theta))
    }

    pub fn diff(&self) -> Mat {
        self.a.sub(&self.b)
    }
}

/// Rotation `Q` (det 1) with `(A−B)Qe_n = 0`: the identity if that already
/// holds, otherwise a reflection sending `e_n` to a null direction composed
/// with the reflection of the first axis.
pub fn split_frame(a: &Mat, b: &Mat) -> Result<Mat> {
    let d = a.sub(b);
    let n = d.cols();
    if n < 2 {
        return Err(Error::Dimension("need n >= 2".into()));
    }
    let scale = d.max_abs().max(1.0);
    let last = d.col(n - 1);
    if last.iter().all(|x| x.abs() <= 1e-10 * scale) {
        return Ok(Mat::identity(n));
    }
    let rank = rank_with_tol(&d, 1e-10);
    if rank >= n {
        return Err(Error::NoSplittingDirection { rank, max: n - 1 });
    }
    let v = null_direction(&d).map_err(|_| Error::NoSplittingDirection { rank, max: n - 1 })?;
    let mut w = v.clone();
    w[n - 1] -= 1.0;
    let wn = crate::linalg::norm(&w);
    let mut h = Mat::identity(n);
    if wn > 1e-14 {
        for i in 0..n {
            for j in 0..n {
                h.set(i, j, h.get(i, j) - 2.0 * w[i] * w[j] / (wn * wn));
            }
        }
        for i in 0..n {
            h.set(i, 0, -h.get(i, 0));
        }
    }
    Ok(h)
}

/// Internal diamond aspect `ε = ½δ/(θ(1−θ)|A−B|)`, capped at the width of
/// the domain along the splitting direction.
pub fn internal_eps(spec: &LaminateSpec, domain: &Polytope) -> f64 {
    let th = spec.theta;
    let eps = 0.5 * spec.delta / (th * (1.0 - th) * spec.diff().norm() + 1e-300);
    let dir = spec.frame.col(spec.n() - 1);
    eps.min(domain.width(&dir))
}

/// A built laminate: cells, potential and field `V = F + L(G)`.
#[derive(Clone, Debug)]
pub struct Laminate {
    pub spec: LaminateSpec,
    pub eps: f64,
    pub complex: Arc<CellComplex>,
    pub potential: PiecewisePotential,
    pub field: PiecewiseConstantField,
    /// Whether each piece carries the `A` phase.
    pub phase_a: Vec<bool>,
}

impl Laminate {
    /// Volume fraction of the domain where `dist(V, {A, B}) ≥ δ`.
    pub fn far_fraction(&self) -> f64 {
        let part = &self.field.partition;
        let vol = part.domain.volume();
        let a = Value::new(self.spec.a.clone());
        let b = Value::new(self.spec.b.clone());
        let near: f64 = part
            .pieces
            .iter()
            .zip(&self.field.values)
            .filter(|(_, v)| v.dist(&a).min(v.dist(&b)) < self.spec.delta)
            .map(|(s, _)| s.volume())
            .sum();
        let bg = &self.field.background;
        let bg_near = bg.dist(&a).min(bg.dist(&b)) < self.spec.delta;
        let res = if bg_near { part.residual_volume() } else { 0.0 };
        (1.0 - (near + res) / vol).max(0.0)
    }
}

/// The `2^n` simplices of the unit diamond, lower (`A`) half first, in
/// local coordinates, with their sign vectors.
fn local_pieces(n: usize, eps: f64, theta: f64) -> Vec<(bool, Vec<f64>, Vec<Vec<f64>>)> {
    let mut out = Vec::new();
    for lower in [true, false] {
        for mask in 0..(1usize << (n - 1)) {
            let s: Vec<f64> = (0..n - 1)
                .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let mut apex = vec![0.0; n];
            if !lower {
                apex[n - 1] = eps;
            }
            let mut waist = vec![0.0; n];
            waist[n - 1] = eps * theta;
            let mut verts = vec![apex, waist.clone()];
            for i in 0..n - 1 {
                let mut v = waist.clone();
                v[i] = s[i];
                verts.push(v);
            }
            out.push((lower, s, verts));
        }
    }
    out
}

/// Packs diamonds of aspect [`internal_eps`] into `domain` and builds the
/// laminate potential in every copy.
pub fn build_laminate(spec: &LaminateSpec, domain: &Polytope, tau: f64) -> Result<Laminate> {
    build_laminate_with(
        spec,
        domain,
        &FillOptions {
            tau,
            ..FillOptions::default()
        },
    )
}

pub fn build_laminate_with(spec: &LaminateSpec, domain: &Polytope, opts: &FillOptions) -> Result<Laminate> {
    let n = spec.n();
    let m = spec.m();
    if domain.dim() != n {
        return Err(Error::Dimension(
            "domain dimension must equal the number of columns".into(),
        ));
    }
    let eps = internal_eps(spec, domain);
    let theta = spec.theta;
    let cell = DiamondCell::new(n, eps, theta, spec.frame.clone())?;
    let complex = vitali_fill_with(domain, &cell, opts)?;
    let diff = spec.diff();
    let f = spec.average();
    let c = eps * theta * (1.0 - theta);
    let locals = local_pieces(n, eps, theta);
    let q = &spec.frame;

    let mut cells = Vec::with_capacity(complex.len());
    let mut maps = Vec::new();
    let mut phase_a = Vec::new();
    for (idx, p) in complex.placements.iter().enumerate() {
        let r = p.scale;
        // Frame and apex of the upright diamond that this copy is an image of.
        let mut tp = q.clone();
        let mut apex = p.center.clone();
        if p.mirrored {
            for i in 0..n {
                tp.set(i, n - 1, -q.get(i, n - 1));
                apex[i] += r * eps * q.get(i, n - 1);
            }
        }
        let t = tp.col(n - 1);
        // S'^k = t d_kᵀ − d_k tᵀ with d_k the k-th row of A − B.
        let mut s_mats = Vec::with_capacity(m);
        for k in 0..m {
            let mut s = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    s.set(i, j, t[i] * diff.get(k, j) - diff.get(k, i) * t[j]);
                }
            }
            s_mats.push(s);
        }
        let skew = SkewStack::from_mats(&s_mats)?;
        let mut pieces = Vec::with_capacity(locals.len());
        for (lower, s, verts) in &locals {
            let mut psi1: Vec<f64> = s.iter().map(|si| -c * si).collect();
            psi1.push(if *lower { 1.0 - theta } else { -theta });
            let psi0 = if *lower { 0.0 } else { theta * eps };
            let g = tp.mul_vec(&psi1);
            let offset = r * psi0 - g.iter().zip(&apex).map(|(a, b)| a * b).sum::<f64>();
            maps.push(AffineSkew {
                c0: skew.scale(offset),
                grad: g.iter().map(|gi| skew.scale(*gi)).collect(),
            });
            phase_a.push(*lower);
            let global: Vec<Vec<f64>> = verts
                .iter()
                .map(|y| {
                    let v = tp.mul_vec(y);
                    (0..n).map(|i| apex[i] + r * v[i]).collect()
                })
                .collect();
            pieces.push(Simplex::new(global));
        }
        cells.push((complex.copy_polytope(idx), pieces));
    }
    let partition = Arc::new(Partition::new(domain.clone(), cells)?);
    let potential = PiecewisePotential::new(partition, m, maps)?;
    let field = apply_l(&potential).shifted(&Value::new(f));
    Ok(Laminate {
        spec: spec.clone(),
        eps,
        complex: Arc::new(complex),
        potential,
        field,
        phase_a,
    })
}

/// Two Born-Infeld states, their weight and tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct BILaminateSpec {
    pub m: Point10,
    pub n: Point10,
    pub theta: f64,
    pub delta: f64,
}

impl BILaminateSpec {
    /// `δ′ = ½δ|A−B|/|M−N|` with `A`, `B` the stacked `(D, B)` rows.
    pub fn delta_prime(&self) -> f64 {
        let ab = self.m.db_rows().sub(&self.n.db_rows()).norm();
        0.5 * self.delta * ab / self.m.dist(&self.n)
    }

    pub fn average(&self) -> Point10 {
        self.n.lerp(&self.m, self.theta)
    }
}

/// A built Born-Infeld laminate.
#[derive(Clone, Debug)]
pub struct BILaminate {
    pub spec: BILaminateSpec,
    pub delta_prime: f64,
    /// Fraction of the covered set classified as the `M` phase.
    pub eta: f64,
    /// The `(D, B)` laminate, absent in the flat-slab case `A = B`.
    pub inner: Option<Laminate>,
    pub field: PiecewiseConstantField,
}

fn split_value(p: &Point10) -> Value {
    Value::with_free(p.db_rows(), vec![p.p[0], p.p[1], p.p[2], p.h])
}

fn ph(p: &Point10) -> [f64; 4] {
    [p.p[0], p.p[1], p.p[2], p.h]
}

/// Laminate between two Born-Infeld states. The `(D, B)` rows are a plain
/// laminate with tolerance `δ′`; `(P, h)` takes the value of the nearer
/// state per piece plus a constant correction that makes the average exact.
pub fn build_bi_laminate(spec: &BILaminateSpec, domain: &Polytope, tau: f64) -> Result<BILaminate> {
    build_bi_laminate_with(
        spec,
        domain,
        &FillOptions {
            tau,
            ..FillOptions::default()
        },
    )
}

pub fn build_bi_laminate_with(spec: &BILaminateSpec, domain: &Polytope, opts: &FillOptions) -> Result<BILaminate> {
    if !(spec.theta > 0.0 && spec.theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta = {} not in (0,1)", spec.theta)));
    }
    if spec.m.dist(&spec.n) == 0.0 {
        return Err(Error::InvalidParameter("M = N".into()));
    }
    if domain.dim() != 3 {
        return Err(Error::Dimension(
            "Born-Infeld laminates live in three dimensions".into(),
        ));
    }
    let (a, b) = (spec.m.db_rows(), spec.n.db_rows());
    let mph = ph(&spec.m);
    let nph = ph(&spec.n);
    let theta = spec.theta;
    if a.sub(&b).norm() == 0.0 {
        return flat_slabs(spec, domain);
    }
    let dp = spec.delta_prime();
    let lspec = LaminateSpec::new(a.clone(), b.clone(), theta, dp)?;
    let lam = build_laminate_with(&lspec, domain, opts)?;
    let part = lam.field.partition.clone();
    let av = Value::new(a);
    let bv = Value::new(b);
    let in_a: Vec<bool> = lam.field.values.iter().map(|v| v.dist(&av) < v.dist(&bv)).collect();
    let vol_a: f64 = part
        .pieces
        .iter()
        .zip(&in_a)
        .filter(|(_, &x)| x)
        .map(|(s, _)| s.volume())
        .sum();
    let covered = part.covered_volume();
    let eta = if covered > 0.0 { vol_a / covered } else { theta };
    let corr: Vec<f64> = (0..4).map(|i| (theta - eta) * (mph[i] - nph[i])).collect();
    let values = lam
        .field
        .values
        .iter()
        .zip(&in_a)
        .map(|(v, &x)| {
            let base = if x { &mph } else { &nph };
            Value::with_free(v.mat.clone(), (0..4).map(|i| base[i] + corr[i]).collect())
        })
        .collect();
    let field = PiecewiseConstantField::new(part, values, split_value(&spec.average()))?;
    Ok(BILaminate {
        spec: spec.clone(),
        delta_prime: dp,
        eta,
        inner: Some(lam),
        field,
    })
}

/// Equal `(D, B)` blocks: two slabs across the last axis with volume fractions
/// `θ` and `1−θ` carrying `M` and `N`.
fn flat_slabs(spec: &BILaminateSpec, domain: &Polytope) -> Result<BILaminate> {
    let n = domain.dim();
    let vol = domain.volume();
    let mut e = vec![0.0; n];
    e[n - 1] = 1.0;
    let (lo, hi) = domain.bbox();
    let (mut a, mut b) = (lo[n - 1], hi[n - 1]);
    let below = |c: f64| domain.clip(&e, c).map(|p| p.volume()).unwrap_or(0.0);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if below(mid) < spec.theta * vol {
            a = mid;
        } else {
            b = mid;
        }
    }
    let cut = 0.5 * (a + b);
    let lower = domain.clip(&e, cut)?;
    let neg: Vec<f64> = e.iter().map(|x| -x).collect();
    let upper = domain.clip(&neg, -cut)?;
    let eta = lower.volume() / vol;
    let mph = ph(&spec.m);
    let nph = ph(&spec.n);
    let corr: Vec<f64> = (0..4).map(|i| (spec.theta - eta) * (mph[i] - nph[i])).collect();
    let lower_n = lower.triangulate().len();
    let part = Arc::new(Partition::from_polytopes(domain.clone(), vec![lower, upper])?);
    let ab = spec.m.db_rows();
    let values = (0..part.len())
        .map(|i| {
            let base = if i < lower_n { &mph } else { &nph };
            Value::with_free(ab.clone(), (0..4).map(|k| base[k] + corr[k]).collect())
        })
        .collect();
    let field = PiecewiseConstantField::new(part, values, split_value(&spec.average()))?;
    Ok(BILaminate {
        spec: spec.clone(),
        delta_prime: spec.delta_prime(),
        eta,
        inner: None,
        field,
    })
}
