//! Piecewise-affine skew potentials, the operator `L`, piecewise-constant
//! fields on simplicial partitions, and exact cellwise integrals.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{inverse, Polytope, Simplex, SimplexRule};
use crate::linalg::{dist, Mat};
use crate::poly::Poly;

/// Highest test-function degree accepted by [`weak_div_residual`].
pub const MAX_TEST_DEGREE: usize = 12;
/// Random points per facet in [`boundary_samples`].
pub const FACET_SAMPLES: usize = 10;

/// A stack of `m` skew-symmetric `n × n` matrices, stored as strict upper
/// triangles so that `G_ij = −G_ji` holds by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewStack {
    m: usize,
    n: usize,
    upper: Vec<f64>,
}

impl SkewStack {
    pub fn zeros(m: usize, n: usize) -> Self {
        SkewStack {
            m,
            n,
            upper: vec![0.0; m * n * (n - 1) / 2],
        }
    }

    /// Builds a stack from full matrices, which must be skew within `1e-12`.
    pub fn from_mats(mats: &[Mat]) -> Result<Self> {
        let m = mats.len();
        let n = mats.first().map(|a| a.rows()).ok_or(Error::EmptyAtoms)?;
        let mut s = SkewStack::zeros(m, n);
        for (k, a) in mats.iter().enumerate() {
            if a.rows() != n || a.cols() != n {
                return Err(Error::Dimension("skew blocks must be n x n".into()));
            }
            for i in 0..n {
                for j in i..n {
                    let (u, l) = (a.get(i, j), a.get(j, i));
                    if (u + l).abs() > 1e-12 * (1.0 + u.abs()) {
                        return Err(Error::InvalidParameter(format!("block {k} not skew at ({i},{j})")));
                    }
                    if i < j {
                        s.set(k, i, j, u);
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn blocks(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        // Row-major strict upper triangle.
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        let per = self.n * (self.n - 1) / 2;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.upper[k * per + self.slot(i, j)],
            std::cmp::Ordering::Greater => -self.upper[k * per + self.slot(j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// Sets `G^k_ij = v` and `G^k_ji = −v`; the diagonal cannot be set.
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let per = self.n * (self.n - 1) / 2;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => {
                let s = self.slot(i, j);
                self.upper[k * per + s] = v;
            }
            std::cmp::Ordering::Greater => {
                let s = self.slot(j, i);
                self.upper[k * per + s] = -v;
            }
            std::cmp::Ordering::Equal => {}
        }
    }

    pub fn to_mats(&self) -> Vec<Mat> {
        (0..self.m)
            .map(|k| {
                let mut a = Mat::zeros(self.n, self.n);
                for i in 0..self.n {
                    for j in 0..self.n {
                        a.set(i, j, self.get(k, i, j));
                    }
                }
                a
            })
            .collect()
    }

    pub fn add(&self, other: &SkewStack) -> SkewStack {
        let upper = self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect();
        SkewStack {
            m: self.m,
            n: self.n,
            upper,
        }
    }

    pub fn scale(&self, s: f64) -> SkewStack {
        SkewStack {
            m: self.m,
            n: self.n,
            upper: self.upper.iter().map(|a| a * s).collect(),
        }
    }

    /// Frobenius norm of the full stack (both triangles).
    pub fn norm(&self) -> f64 {
        (2.0 * self.upper.iter().map(|a| a * a).sum::<f64>()).sqrt()
    }
}

/// `x ↦ c0 + Σ_i x_i·grad[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSkew {
    pub c0: SkewStack,
    pub grad: Vec<SkewStack>,
}

impl AffineSkew {
    pub fn zeros(m: usize, n: usize) -> Self {
        AffineSkew {
            c0: SkewStack::zeros(m, n),
            grad: vec![SkewStack::zeros(m, n); n],
        }
    }

    pub fn eval(&self, x: &[f64]) -> SkewStack {
        let mut out = self.c0.clone();
        for (g, xi) in self.grad.iter().zip(x) {
            out.upper.iter_mut().zip(&g.upper).for_each(|(o, v)| *o += xi * v);
        }
        out
    }

    /// `(L(G))_kj = Σ_i ∂_i G^k_ij`, constant for an affine map.
    pub fn apply_l(&self) -> Mat {
        let (m, n) = (self.c0.m, self.c0.n);
        let mut out = Mat::zeros(m, n);
        for k in 0..m {
            for j in 0..n {
                let s: f64 = (0..n).map(|i| self.grad[i].get(k, i, j)).sum();
                out.set(k, j, s);
            }
        }
        out
    }

    pub fn add(&self, other: &AffineSkew) -> AffineSkew {
        AffineSkew {
            c0: self.c0.add(&other.c0),
            grad: self.grad.iter().zip(&other.grad).map(|(a, b)| a.add(b)).collect(),
        }
    }
}

/// Multilevel bucket grid over simplex bounding boxes.
#[derive(Debug, Default)]
struct SimplexIndex {
    map: HashMap<(Vec<i32>, Vec<i64>), Vec<usize>>,
    levels: Vec<Vec<i32>>,
}

impl SimplexIndex {
    fn build(pieces: &[Simplex]) -> Self {
        let mut idx = SimplexIndex::default();
        for (id, s) in pieces.iter().enumerate() {
            let n = s.dim();
            let lo: Vec<f64> = (0..n)
                .map(|i| s.vertices.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min))
                .collect();
            let hi: Vec<f64> = (0..n)
                .map(|i| s.vertices.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let exps: Vec<i32> = (0..n)
                .map(|i| (hi[i] - lo[i]).max(1e-300).log2().ceil() as i32)
                .collect();
            let klo: Vec<i64> = (0..n).map(|i| (lo[i] / 2f64.powi(exps[i])).floor() as i64).collect();
            let khi: Vec<i64> = (0..n).map(|i| (hi[i] / 2f64.powi(exps[i])).floor() as i64).collect();
            let mut z = klo.clone();
            loop {
                idx.map.entry((exps.clone(), z.clone())).or_default().push(id);
                let mut i = 0;
                while i < n {
                    z[i] += 1;
                    if z[i] <= khi[i] {
                        break;
                    }
                    z[i] = klo[i];
                    i += 1;
                }
                if i == n {
                    break;
                }
            }
            if !idx.levels.contains(&exps) {
                idx.levels.push(exps);
            }
        }
        idx
    }

    fn candidates(&self, x: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        for exps in &self.levels {
            let key: Vec<i64> = x
                .iter()
                .zip(exps)
                .map(|(v, e)| (v / 2f64.powi(*e)).floor() as i64)
                .collect();
            if let Some(ids) = self.map.get(&(exps.clone(), key)) {
                out.extend_from_slice(ids);
            }
        }
        out
    }
}

/// A partition of part of a domain into simplices grouped into cells. Each
/// cell has a convex outline whose boundary is where potentials must vanish;
/// the rest of the domain is the residual set.
#[derive(Debug)]
pub struct Partition {
    pub domain: Polytope,
    pub pieces: Vec<Simplex>,
    /// Cell owning each piece.
    pub owner: Vec<usize>,
    pub outlines: Vec<Polytope>,
    bary: Vec<(Vec<f64>, Mat)>,
    index: OnceLock<SimplexIndex>,
}

impl Partition {
    /// Builds a partition from cells given as (outline, pieces).
    pub fn new(domain: Polytope, cells: Vec<(Polytope, Vec<Simplex>)>) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut owner = Vec::new();
        let mut outlines = Vec::new();
        for (c, (outline, ps)) in cells.into_iter().enumerate() {
            for p in ps {
                if p.dim() != domain.dim() {
                    return Err(Error::Dimension("piece dimension differs from domain".into()));
                }
                pieces.push(p);
                owner.push(c);
            }
            outlines.push(outline);
        }
        let bary = pieces
            .iter()
            .map(|s| {
                let n = s.dim();
                let mut e = Mat::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        e.set(i, j, s.vertices[j + 1][i] - s.vertices[0][i]);
                    }
                }
                let inv = inverse(&e).ok_or_else(|| Error::InvalidParameter("degenerate piece".into()))?;
                Ok((s.vertices[0].clone(), inv))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Partition {
            domain,
            pieces,
            owner,
            outlines,
            bary,
            index: OnceLock::new(),
        })
    }

    /// The domain alone, with no cells.
    pub fn empty(domain: Polytope) -> Self {
        Partition::new(domain, Vec::new()).expect("no pieces")
    }

    /// Each polytope becomes one cell, triangulated.
    pub fn from_polytopes(domain: Polytope, cells: Vec<Polytope>) -> Result<Self> {
        let cells = cells.into_iter().map(|p| {
            let t = p.triangulate();
            (p, t)
        });
        Partition::new(domain, cells.collect())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.outlines.len()
    }

    /// Smallest barycentric coordinate of `x` in piece `i`.
    pub fn bary_min(&self, i: usize, x: &[f64]) -> f64 {
        let (v0, inv) = &self.bary[i];
        let d: Vec<f64> = x.iter().zip(v0).map(|(a, b)| a - b).collect();
        let l = inv.mul_vec(&d);
        let l0 = 1.0 - l.iter().sum::<f64>();
        l.into_iter().fold(l0, f64::min)
    }

    /// The piece containing `x` (closed, with relative slack `1e-12`); the
    /// deepest one wins on shared faces.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let idx = self.index.get_or_init(|| SimplexIndex::build(&self.pieces));
        let mut best: Option<(f64, usize)> = None;
        for i in idx.candidates(x) {
            let b = self.bary_min(i, x);
            if b >= -1e-12 && best.map_or(true, |(bb, _)| b > bb) {
                best = Some((b, i));
            }
        }
        best.map(|(_, i)| i)
    }

    /// The piece of `cell` that best contains `x`.
    fn locate_in_cell(&self, cell: usize, x: &[f64], pieces_of: &[Vec<usize>]) -> usize {
        let mut best = (f64::NEG_INFINITY, pieces_of[cell][0]);
        for &i in &pieces_of[cell] {
            let b = self.bary_min(i, x);
            if b > best.0 {
                best = (b, i);
            }
        }
        best.1
    }

    fn pieces_of(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cells()];
        for (i, &c) in self.owner.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn covered_volume(&self) -> f64 {
        self.pieces.iter().map(|p| p.volume()).sum()
    }

    pub fn residual_volume(&self) -> f64 {
        (self.domain.volume() - self.covered_volume()).max(0.0)
    }
}

/// Per-piece affine skew potential on a partition, zero on the residual set.
#[derive(Clone, Debug)]
pub struct PiecewisePotential {
    pub partition: Arc<Partition>,
    pub m: usize,
    pub n: usize,
    pub maps: Vec<AffineSkew>,
}

impl PiecewisePotential {
    pub fn new(partition: Arc<Partition>, m: usize, maps: Vec<AffineSkew>) -> Result<Self> {
        if maps.len() != partition.len() {
            return Err(Error::Dimension("one affine map per piece required".into()));
        }
        let n = partition.dim();
        Ok(PiecewisePotential { partition, m, n, maps })
    }

    pub fn zero(partition: Arc<Partition>, m: usize) -> Self {
        let n = partition.dim();
        let maps = vec![AffineSkew::zeros(m, n); partition.len()];
        PiecewisePotential { partition, m, n, maps }
    }

    pub fn eval(&self, x: &[f64]) -> SkewStack {
        match self.partition.locate(x) {
            Some(i) => self.maps[i].eval(x),
            None => SkewStack::zeros(self.m, self.n),
        }
    }

    /// `‖G‖_∞`, attained at piece vertices since each map is affine.
    pub fn sup_norm(&self) -> f64 {
        self.partition
            .pieces
            .iter()
            .zip(&self.maps)
            .flat_map(|(s, g)| s.vertices.iter().map(move |v| g.eval(v).norm()))
            .fold(0.0, f64::max)
    }

    /// Largest `|G|` over [`boundary_samples`] of every cell outline, each
    /// evaluated with the cell's own pieces.
    pub fn max_boundary_value(&self, seed: u64) -> f64 {
        let part = &self.partition;
        let pieces_of = part.pieces_of();
        let mut worst: f64 = 0.0;
        for (c, outline) in part.outlines.iter().enumerate() {
            if pieces_of[c].is_empty() {
                continue;
            }
            for x in boundary_samples(outline, seed.wrapping_add(c as u64)) {
                let i = part.locate_in_cell(c, &x, &pieces_of);
                worst = worst.max(self.maps[i].eval(&x).norm());
            }
        }
        worst
    }
}

/// Field value: an `m × n` block subject to the divergence constraint plus
/// free components that are not.
#[derive(Clone, Debug, PartialEq)]
pub struct Value {
    pub mat: Mat,
    pub free: Vec<f64>,
}

impl Value {
    pub fn new(mat: Mat) -> Self {
        Value { mat, free: Vec::new() }
    }

    pub fn with_free(mat: Mat, free: Vec<f64>) -> Self {
        Value { mat, free }
    }

    /// All components, matrix rows first.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.mat.data().to_vec();
        v.extend_from_slice(&self.free);
        v
    }

    pub fn dist(&self, other: &Value) -> f64 {
        dist(&self.flatten(), &other.flatten())
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.flatten())
    }
}

/// Constant value per piece, `background` on the residual set.
#[derive(Clone, Debug)]
pub struct PiecewiseConstantField {
    pub partition: Arc<Partition>,
    pub values: Vec<Value>,
    pub background: Value,
}

impl PiecewiseConstantField {
    pub fn new(partition: Arc<Partition>, values: Vec<Value>, background: Value) -> Result<Self> {
        if values.len() != partition.len() {
            return Err(Error::Dimension("one value per piece required".into()));
        }
        let shape = (background.mat.rows(), background.mat.cols(), background.free.len());
        if values
            .iter()
            .any(|v| (v.mat.rows(), v.mat.cols(), v.free.len()) != shape)
        {
            return Err(Error::Dimension("field values must share one shape".into()));
        }
        if values
            .iter()
            .chain(std::iter::once(&background))
            .any(|v| v.flatten().iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite("field value"));
        }
        Ok(PiecewiseConstantField {
            partition,
            values,
            background,
        })
    }

    pub fn constant(domain: Polytope, value: Value) -> Self {
        PiecewiseConstantField {
            partition: Arc::new(Partition::empty(domain)),
            values: Vec::new(),
            background: value,
        }
    }

    pub fn eval(&self, x: &[f64]) -> &Value {
        match self.partition.locate(x) {
            Some(i) => &self.values[i],
            None => &self.background,
        }
    }

    /// Sup norm over pieces and background.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .chain(std::iter::once(&self.background))
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Adds a constant to every value, background included.
    pub fn shifted(&self, c: &Value) -> PiecewiseConstantField {
        let add = |v: &Value| Value {
            mat: v.mat.add(&c.mat),
            free: v.free.iter().zip(&c.free).map(|(a, b)| a + b).collect(),
        };
        PiecewiseConstantField {
            partition: self.partition.clone(),
            values: self.values.iter().map(add).collect(),
            background: add(&self.background),
        }
    }
}

/// `L(G)` per piece; zero on the residual set.
pub fn apply_l(pot: &PiecewisePotential) -> PiecewiseConstantField {
    let values = pot.maps.iter().map(|g| Value::new(g.apply_l())).collect();
    PiecewiseConstantField {
        partition: pot.partition.clone(),
        values,
        background: Value::new(Mat::zeros(pot.m, pot.n)),
    }
}

/// Polynomial flattened for allocation-free evaluation.
struct FlatPoly {
    exps: Vec<u32>,
    coefs: Vec<f64>,
}

impl FlatPoly {
    fn new(p: &Poly) -> Self {
        let mut exps = Vec::new();
        let mut coefs = Vec::new();
        for (e, c) in p.terms() {
            exps.extend_from_slice(e);
            coefs.push(*c);
        }
        FlatPoly { exps, coefs }
    }

    /// Evaluates from `pows[i * stride + k] = x_i^k`.
    fn eval(&self, pows: &[f64], n: usize, stride: usize) -> f64 {
        let mut acc = 0.0;
        for (t, c) in self.coefs.iter().enumerate() {
            let e = &self.exps[t * n..(t + 1) * n];
            let mut m = *c;
            for (i, &k) in e.iter().enumerate() {
                m *= pows[i * stride + k as usize];
            }
            acc += m;
        }
        acc
    }
}

/// Quadrature of the gradients of several polynomials over simplices, with
/// the mapped quadrature points shared across all of them.
struct GradIntegrator {
    n: usize,
    rule: SimplexRule,
    grads: Vec<FlatPoly>,
    stride: usize,
    pows: Vec<f64>,
}

impl GradIntegrator {
    fn new(n: usize, phis: &[&Poly]) -> Self {
        let deg = phis.iter().map(|p| p.degree()).max().unwrap_or(0);
        let rule = SimplexRule::new(n, deg.saturating_sub(1).max(1));
        let grads: Vec<FlatPoly> = phis.iter().flat_map(|p| p.grad()).map(|g| FlatPoly::new(&g)).collect();
        let stride = deg + 1;
        GradIntegrator {
            n,
            rule,
            grads,
            stride,
            pows: vec![1.0; n * stride],
        }
    }

    /// `out[p * n + i] = ∫_s ∂_i φ_p`.
    fn integrate(&mut self, s: &Simplex, out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut x = [0.0; 8];
        for (b, w) in self.rule.points.iter().zip(&self.rule.weights) {
            x[..n].iter_mut().for_each(|v| *v = 0.0);
            for (v, l) in s.vertices.iter().zip(b) {
                for i in 0..n {
                    x[i] += l * v[i];
                }
            }
            for i in 0..n {
                for k in 1..self.stride {
                    self.pows[i * self.stride + k] = self.pows[i * self.stride + k - 1] * x[i];
                }
            }
            for (o, g) in out.iter_mut().zip(&self.grads) {
                *o += w * g.eval(&self.pows, n, self.stride);
            }
        }
        let vol = s.volume();
        out.iter_mut().for_each(|v| *v *= vol);
    }
}

/// [`weak_div_residual`] for several test functions in one pass over the
/// pieces; entry `p` holds the residual rows for `phis[p]`.
pub fn weak_div_residuals(field: &PiecewiseConstantField, phis: &[Poly]) -> Result<Vec<Vec<f64>>> {
    let part = &field.partition;
    let n = part.dim();
    if n > 8 {
        return Err(Error::Dimension("weak divergence supports at most 8 variables".into()));
    }
    for phi in phis {
        if phi.nvars() != n {
            return Err(Error::Dimension(
                "test function has the wrong number of variables".into(),
            ));
        }
        let deg = phi.degree();
        if deg > MAX_TEST_DEGREE {
            return Err(Error::UnsupportedDegree(deg, MAX_TEST_DEGREE));
        }
    }
    let refs: Vec<&Poly> = phis.iter().collect();
    let mut quad = GradIntegrator::new(n, &refs);
    let np = phis.len();
    let m = field.background.mat.rows();
    let mut g = vec![0.0; np * n];
    let mut res = vec![0.0; np * n];
    for s in part.domain.triangulate() {
        quad.integrate(&s, &mut g);
        res.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
    }
    let mut out = vec![vec![0.0; m]; np];
    for (s, v) in part.pieces.iter().zip(&field.values) {
        quad.integrate(s, &mut g);
        for (p, o) in out.iter_mut().enumerate() {
            let gp = &g[p * n..(p + 1) * n];
            for (k, ok) in o.iter_mut().enumerate() {
                *ok += v.mat.row(k).iter().zip(gp).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        res.iter_mut().zip(&g).for_each(|(t, v)| *t -= v);
    }
    for (p, o) in out.iter_mut().enumerate() {
        let rp = &res[p * n..(p + 1) * n];
        for (k, ok) in o.iter_mut().enumerate() {
            *ok += field
                .background
                .mat
                .row(k)
                .iter()
                .zip(rp)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
    }
    Ok(out)
}

/// `(∫_Ω V_k·∇φ)_k` over the rows of the constrained block, computed exactly
/// piece by piece; the residual set contributes through
/// `∫_res ∇φ = ∫_Ω ∇φ − Σ ∫_piece ∇φ`.
pub fn weak_div_residual(field: &PiecewiseConstantField, phi: &Poly) -> Result<Vec<f64>> {
    Ok(weak_div_residuals(field, std::slice::from_ref(phi))?.remove(0))
}

/// Estimate of `‖∇φ‖_∞` on a polytope from vertices and a regular grid.
pub fn grad_sup_estimate(phi: &Poly, domain: &Polytope, per_axis: usize) -> f64 {
    let grad = phi.grad();
    let gnorm = |x: &[f64]| grad.iter().map(|g| g.eval(x).powi(2)).sum::<f64>().sqrt();
    let mut best = domain.vertices().iter().map(|v| gnorm(v)).fold(0.0, f64::max);
    let (lo, hi) = domain.bbox();
    let n = lo.len();
    let mut idx = vec![0usize; n];
    loop {
        let x: Vec<f64> = (0..n)
            .map(|i| lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / per_axis as f64)
            .collect();
        if domain.contains(&x, 1e-12) {
            best = best.max(gnorm(&x));
        }
        let mut i = 0;
        while i < n {
            idx[i] += 1;
            if idx[i] <= per_axis {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// `(1/vol Ω)(Σ vol(piece)·value + vol(residual)·background)`.
pub fn average(field: &PiecewiseConstantField) -> Value {
    let part = &field.partition;
    let vol = part.domain.volume();
    let bg = &field.background;
    let mut acc: Vec<f64> = bg.flatten().iter().map(|v| v * vol).collect();
    for (s, v) in part.pieces.iter().zip(&field.values) {
        let w = s.volume();
        for (a, (x, b)) in acc.iter_mut().zip(v.flatten().iter().zip(bg.flatten())) {
            *a += w * (x - b);
        }
    }
    let rows = bg.mat.rows();
    let cols = bg.mat.cols();
    let flat: Vec<f64> = acc.iter().map(|a| a / vol).collect();
    Value {
        mat: Mat::new(rows, cols, flat[..rows * cols].to_vec()).expect("shape"),
        free: flat[rows * cols..].to_vec(),
    }
}

/// Result of [`mollification_gap`].
#[derive(Clone, Debug, PartialEq)]
pub struct MollificationGap {
    /// Grid estimate of `‖ρ_ε ∗ L(H) − L(H)‖_{L¹(region)}`.
    pub gap: f64,
    /// `2‖L(H)‖_∞ · vol` of grid cells adjacent to a jump.
    pub error_bound: f64,
    pub grid_h: f64,
}

/// Normalized 1-D weights of the hat kernel `(1 − |t|/ε)_+` at spacing `h`.
pub fn hat_weights(eps: f64, h: f64) -> Vec<f64> {
    let r = (eps / h).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|j| (1.0 - (j as f64 * h).abs() / eps).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// L¹ distance between `L(H)` and its mollification on `region`, by sampling
/// on a grid of spacing `grid_h` and convolving with the tensor-product hat
/// kernel of radius `eps`. `H` is extended by zero outside its partition.
pub fn mollification_gap(
    pot: &PiecewisePotential,
    eps: f64,
    grid_h: f64,
    region: &Polytope,
) -> Result<MollificationGap> {
    if !(eps > 0.0) || !(grid_h > 0.0) {
        return Err(Error::InvalidParameter("eps and grid_h must be positive".into()));
    }
    if grid_h > eps / 8.0 * (1.0 + 1e-12) {
        return Err(Error::GridTooCoarse {
            grid_h,
            limit: eps / 8.0,
        });
    }
    let field = apply_l(pot);
    let n = pot.n;
    let comps = pot.m * n;
    let (lo, hi) = region.bbox();
    let pad = (eps / grid_h).ceil() as usize + 1;
    let counts: Vec<usize> = (0..n)
        .map(|i| ((hi[i] - lo[i]) / grid_h).ceil() as usize + 2 * pad)
        .collect();
    let total: usize = counts.iter().product();
    let point = |flat: usize| -> Vec<f64> {
        let mut rem = flat;
        (0..n)
            .map(|i| {
                let c = rem % counts[i];
                rem /= counts[i];
                lo[i] + (c as f64 + 0.5 - pad as f64) * grid_h
            })
            .collect()
    };
    let domain = &pot.partition.domain;
    let mut vals = vec![0.0; total * comps];
    for f in 0..total {
        let x = point(f);
        if !domain.contains(&x, 0.0) {
            continue;
        }
        if let Some(i) = pot.partition.locate(&x) {
            vals[f * comps..(f + 1) * comps].copy_from_slice(field.values[i].mat.data());
        }
    }
    let w = hat_weights(eps, grid_h);
    let r = (w.len() / 2) as i64;
    let mut smooth = vals.clone();
    let mut stride = 1usize;
    for axis in 0..n {
        let mut out = vec![0.0; total * comps];
        for f in 0..total {
            let c = (f / stride % counts[axis]) as i64;
            for (jj, wj) in w.iter().enumerate() {
                let cc = c + jj as i64 - r;
                if cc < 0 || cc >= counts[axis] as i64 {
                    continue;
                }
                let g = (f as i64 + (cc - c) * stride as i64) as usize;
                for q in 0..comps {
                    out[f * comps + q] += wj * smooth[g * comps + q];
                }
            }
        }
        smooth = out;
        stride *= counts[axis];
    }
    let cell = grid_h.powi(n as i32);
    let sup = field.sup_norm();
    let mut gap = 0.0;
    let mut near_jump = 0usize;
    for f in 0..total {
        let x = point(f);
        if !region.contains(&x, 0.0) {
            continue;
        }
        let d: f64 = (0..comps)
            .map(|q| (smooth[f * comps + q] - vals[f * comps + q]).powi(2))
            .sum::<f64>()
            .sqrt();
        gap += d * cell;
        let mut s = 1usize;
        let mut jump = false;
        for axis in 0..n {
            let c = f / s % counts[axis];
            for nb in [c.wrapping_sub(1), c + 1] {
                if nb < counts[axis] {
                    let g = f + nb * s - c * s;
                    if vals[g * comps..(g + 1) * comps] != vals[f * comps..(f + 1) * comps] {
                        jump = true;
                    }
                }
            }
            s *= counts[axis];
        }
        near_jump += usize::from(jump);
    }
    Ok(MollificationGap {
        gap,
        error_bound: 2.0 * sup * near_jump as f64 * cell,
        grid_h,
    })
}

/// Volume fractions of a field near a list of atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    pub atoms: Vec<Value>,
    pub weights: Vec<f64>,
    pub unassigned: f64,
}

/// Volume fraction of the field lying within `radius` of each atom; the
/// residual set counts with the background value.
pub fn empirical_measure(field: &PiecewiseConstantField, atoms: &[Value], radius: f64) -> Result<EmpiricalMeasure> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    for (i, a) in atoms.iter().enumerate() {
        for (j, b) in atoms.iter().enumerate().skip(i + 1) {
            if a.dist(b) < 2.0 * radius {
                return Err(Error::OverlappingAtoms(i, j));
            }
        }
    }
    let part = &field.partition;
    let vol = part.domain.volume();
    let mut weights = vec![0.0; atoms.len()];
    let assign = |v: &Value| atoms.iter().position(|a| a.dist(v) < radius);
    let mut covered = 0.0;
    for (s, v) in part.pieces.iter().zip(&field.values) {
        let w = s.volume();
        covered += w;
        if let Some(j) = assign(v) {
            weights[j] += w / vol;
        }
    }
    if let Some(j) = assign(&field.background) {
        weights[j] += (vol - covered).max(0.0) / vol;
    }
    let unassigned = (1.0 - weights.iter().sum::<f64>()).max(0.0);
    Ok(EmpiricalMeasure {
        atoms: atoms.to_vec(),
        weights,
        unassigned,
    })
}

/// Vertices, facet centroids and [`FACET_SAMPLES`] seeded random points per
/// facet of a polytope.
pub fn boundary_samples(poly: &Polytope, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = poly.vertices().to_vec();
    for face in poly.facet_vertices() {
        let pts: Vec<&Vec<f64>> = face.iter().map(|&i| &poly.vertices()[i]).collect();
        let k = pts.len();
        let n = poly.dim();
        let centroid: Vec<f64> = (0..n)
            .map(|i| pts.iter().map(|p| p[i]).sum::<f64>() / k as f64)
            .collect();
        out.push(centroid);
        for _ in 0..FACET_SAMPLES {
            let mut w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let t: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= t);
            out.push(
                (0..n)
                    .map(|i| pts.iter().zip(&w).map(|(p, a)| a * p[i]).sum())
                    .collect(),
            );
        }
    }
    out
}

/// Test functions vanishing on `∂domain`: the barrier of the domain times
/// `1`, each coordinate and each product of two coordinates.
pub fn polynomial_test_suite(domain: &Polytope) -> Vec<Poly> {
    let n = domain.dim();
    let bubble = Poly::barrier(domain.normals(), domain.offsets());
    let mut out = vec![bubble.clone()];
    for i in 0..n {
        out.push(bubble.mul(&Poly::var(n, i)));
    }
    for i in 0..n {
        for j in i..n {
            out.push(bubble.mul(&Poly::var(n, i)).mul(&Poly::var(n, j)));
        }
    }
    out
}

/// `max_k |∫ V_k·∇φ| / (‖V‖_∞ ‖∇φ‖_∞ vol Ω)`, the scale-free weak divergence
/// of the constrained rows against `phi`.
pub fn relative_div_residual(field: &PiecewiseConstantField, phi: &Poly) -> Result<f64> {
    Ok(relative_div_residuals(field, std::slice::from_ref(phi))?[0])
}

/// [`relative_div_residual`] for each of `phis`, in one pass over the pieces.
pub fn relative_div_residuals(field: &PiecewiseConstantField, phis: &[Poly]) -> Result<Vec<f64>> {
    let res = weak_div_residuals(field, phis)?;
    let domain = &field.partition.domain;
    let sup = field.sup_norm().max(f64::MIN_POSITIVE);
    Ok(res
        .iter()
        .zip(phis)
        .map(|(r, phi)| {
            let scale = sup * grad_sup_estimate(phi, domain, 8) * domain.volume();
            r.iter().map(|v| v.abs()).fold(0.0, f64::max) / scale
        })
        .collect())
}
