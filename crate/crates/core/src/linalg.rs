//! Small dense linear algebra, rank tests and a deterministic simplex solver
//! for convex-hull membership.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix from {} entries",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Mat::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v`.
    pub fn tmul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tmul_vec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self.get(i, j) * v[i];
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn det(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "det of non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
                .unwrap();
            if a[p * n + c] == 0.0 {
                return 0.0;
            }
            if p != c {
                for j in 0..n {
                    a.swap(p * n + j, c * n + j);
                }
                det = -det;
            }
            let piv = a[c * n + c];
            det *= piv;
            for i in c + 1..n {
                let f = a[i * n + c] / piv;
                if f != 0.0 {
                    for j in c..n {
                        a[i * n + j] -= f * a[c * n + j];
                    }
                }
            }
        }
        det
    }
}

/// A point of R^10 split into the electric, magnetic, momentum and energy blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point10 {
    pub d: [f64; 3],
    pub b: [f64; 3],
    pub p: [f64; 3],
    pub h: f64,
}

impl Point10 {
    pub const ZERO: Point10 = Point10 {
        d: [0.0; 3],
        b: [0.0; 3],
        p: [0.0; 3],
        h: 0.0,
    };

    pub fn new(d: [f64; 3], b: [f64; 3], p: [f64; 3], h: f64) -> Self {
        Point10 { d, b, p, h }
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        Point10 {
            d: [a[0], a[1], a[2]],
            b: [a[3], a[4], a[5]],
            p: [a[6], a[7], a[8]],
            h: a[9],
        }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        let mut arr = [0.0; 10];
        arr.copy_from_slice(&a[..10]);
        Point10::from_array(arr)
    }

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.d[0], self.d[1], self.d[2], self.b[0], self.b[1], self.b[2], self.p[0], self.p[1], self.p[2], self.h,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// The stacked 2×3 matrix with rows D and B.
    pub fn db_rows(&self) -> Mat {
        Mat::new(
            2,
            3,
            vec![self.d[0], self.d[1], self.d[2], self.b[0], self.b[1], self.b[2]],
        )
        .expect("finite 2x3")
    }

    pub fn norm(&self) -> f64 {
        norm(&self.to_array())
    }

    pub fn dist(&self, other: &Point10) -> f64 {
        dist(&self.to_array(), &other.to_array())
    }

    pub fn lerp(&self, other: &Point10, t: f64) -> Point10 {
        let a = self.to_array();
        let b = other.to_array();
        let mut out = [0.0; 10];
        for i in 0..10 {
            out[i] = a[i] + t * (b[i] - a[i]);
        }
        Point10::from_array(out)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Standard cross product.
pub fn wedge(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Numerical rank by Gaussian elimination with full pivoting; pivots below
/// `tol · max|entry|` count as zero.
pub fn rank_with_tol(m: &Mat, tol: f64) -> usize {
    let scale = m.max_abs();
    if scale == 0.0 {
        return 0;
    }
    let thresh = tol * scale;
    let (r, c) = (m.rows(), m.cols());
    let mut a = m.data().to_vec();
    let mut rank = 0;
    let mut row_used = vec![false; r];
    let mut col_used = vec![false; c];
    loop {
        let mut best = (0.0, 0, 0);
        for i in (0..r).filter(|&i| !row_used[i]) {
            for j in (0..c).filter(|&j| !col_used[j]) {
                let v = a[i * c + j].abs();
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        let (v, pi, pj) = best;
        if v <= thresh {
            return rank;
        }
        rank += 1;
        row_used[pi] = true;
        col_used[pj] = true;
        let piv = a[pi * c + pj];
        for i in (0..r).filter(|&i| !row_used[i]) {
            let f = a[i * c + pj] / piv;
            if f != 0.0 {
                for j in 0..c {
                    a[i * c + j] -= f * a[pi * c + j];
                }
            }
        }
    }
}

/// Orthonormal basis of the row space, by twice-iterated modified Gram–Schmidt.
fn row_space_basis(m: &Mat, tol: f64) -> Vec<Vec<f64>> {
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..m.rows() {
        let mut v: Vec<f64> = m.row(i).iter().map(|x| x / scale).collect();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                axpy(-c, q, &mut v);
            }
        }
        let nv = norm(&v);
        if nv > tol {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    basis
}

/// Unit vector `v` with `Mv = 0`. Among the projections of the coordinate
/// axes onto the null space the longest is returned, preferring `e_n` on ties,
/// so a matrix that already annihilates `e_n` yields exactly `e_n`.
pub fn null_direction(m: &Mat) -> Result<Vec<f64>> {
    let n = m.cols();
    let basis = row_space_basis(m, 1e-10);
    if basis.len() >= n || rank_with_tol(m, 1e-10) >= n {
        return Err(Error::NoNullDirection(n));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in (0..n).rev() {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                axpy(-c, q, &mut v);
            }
        }
        let nv = norm(&v);
        if best.as_ref().map_or(true, |(b, _)| nv > *b + 1e-12) {
            best = Some((nv, v));
        }
    }
    let (nv, mut v) = best.expect("n >= 1");
    if nv <= 1e-12 {
        return Err(Error::NoNullDirection(n));
    }
    for x in v.iter_mut() {
        *x /= nv;
    }
    // Snap exact axis directions so that the frame is the identity when possible.
    for x in v.iter_mut() {
        if x.abs() < 1e-15 {
            *x = 0.0;
        }
    }
    Ok(v)
}

/// Outcome of a linear program in standard form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers. For an infeasible problem these are the phase-one
    /// multipliers, which certify infeasibility: `yᵀA ≤ 0` and `yᵀb > 0`.
    pub duals: Vec<f64>,
    /// Phase-one optimum (sum of artificial variables).
    pub infeasibility: f64,
}

struct Tableau {
    rows: usize,
    ncols: usize, // structural + artificial
    nstruct: usize,
    t: Vec<f64>, // rows x (ncols + 1), last column is the rhs
    basis: Vec<usize>,
    cost: Vec<f64>, // reduced costs, length ncols + 1 (last = -objective)
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.ncols + 1) + j]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.ncols + 1;
        let piv = self.t[pr * w + pc];
        for j in 0..w {
            self.t[pr * w + j] /= piv;
        }
        for i in 0..self.rows {
            if i == pr {
                continue;
            }
            let f = self.t[i * w + pc];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= f * self.t[pr * w + j];
                }
                self.t[i * w + pc] = 0.0;
            }
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for j in 0..w {
                self.cost[j] -= f * self.t[pr * w + j];
            }
            self.cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Bland's rule iterations; `allowed` limits entering columns.
    fn run(&mut self, allowed: usize, opt_tol: f64) -> LpStatus {
        let piv_tol = 1e-11;
        let max_iter = 50_000;
        for _ in 0..max_iter {
            let entering = (0..allowed).find(|&j| self.cost[j] < -opt_tol);
            let Some(pc) = entering else {
                return LpStatus::Optimal;
            };
            let mut leave: Option<(f64, usize, usize)> = None;
            for i in 0..self.rows {
                let a = self.at(i, pc);
                if a > piv_tol {
                    let ratio = self.at(i, self.ncols) / a;
                    let better = match leave {
                        None => true,
                        Some((r, _, bidx)) => ratio < r - 1e-15 || (ratio <= r + 1e-15 && self.basis[i] < bidx),
                    };
                    if better {
                        leave = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            match leave {
                None => return LpStatus::Unbounded,
                Some((_, pr, _)) => self.pivot(pr, pc),
            }
        }
        LpStatus::Optimal
    }
}

/// Solves `min cᵀx` subject to `Ax = b`, `x ≥ 0` by the two-phase simplex
/// method with Bland's anti-cycling rule. Deterministic.
pub fn solve_lp(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> LpSolution {
    let rows = a.len();
    let nstruct = c.len();
    let ncols = nstruct + rows;
    let w = ncols + 1;
    let mut t = vec![0.0; rows * w];
    let mut sign = vec![1.0; rows];
    for i in 0..rows {
        sign[i] = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..nstruct {
            t[i * w + j] = sign[i] * a[i][j];
        }
        t[i * w + nstruct + i] = 1.0;
        t[i * w + ncols] = sign[i] * b[i];
    }
    let mut cost = vec![0.0; w];
    for i in 0..rows {
        for j in 0..nstruct {
            cost[j] -= t[i * w + j];
        }
        cost[ncols] -= t[i * w + ncols];
    }
    let mut tab = Tableau {
        rows,
        ncols,
        nstruct,
        t,
        basis: (nstruct..ncols).collect(),
        cost,
    };
    let scale_b = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    tab.run(ncols, 1e-12);
    let infeasibility = -tab.cost[ncols];
    // Phase-one multipliers from the reduced costs of the artificial columns.
    let phase1_duals: Vec<f64> = (0..rows).map(|i| sign[i] * (1.0 - tab.cost[nstruct + i])).collect();
    if infeasibility > 1e-11 * scale_b {
        return LpSolution {
            status: LpStatus::Infeasible,
            x: extract(&tab),
            objective: f64::NAN,
            duals: phase1_duals,
            infeasibility,
        };
    }
    // Drive artificial variables out of the basis where possible.
    for i in 0..rows {
        if tab.basis[i] >= nstruct {
            if let Some(j) = (0..nstruct).find(|&j| tab.at(i, j).abs() > 1e-9) {
                tab.pivot(i, j);
            }
        }
    }
    // Phase two.
    let mut cost2 = vec![0.0; w];
    cost2[..nstruct].copy_from_slice(c);
    for i in 0..rows {
        let cb = if tab.basis[i] < nstruct { c[tab.basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..w {
                cost2[j] -= cb * tab.at(i, j);
            }
        }
    }
    tab.cost = cost2;
    let cscale = c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let status = tab.run(nstruct, 1e-12 * cscale);
    let x = extract(&tab);
    let objective = dot(c, &x);
    let duals = (0..rows).map(|i| -sign[i] * tab.cost[nstruct + i]).collect();
    LpSolution {
        status,
        x,
        objective,
        duals,
        infeasibility,
    }
}

fn extract(tab: &Tableau) -> Vec<f64> {
    let mut x = vec![0.0; tab.nstruct];
    for i in 0..tab.rows {
        if tab.basis[i] < tab.nstruct {
            x[tab.basis[i]] = tab.at(i, tab.ncols);
        }
    }
    x
}

/// Result of a convex-hull membership test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LPResult {
    pub feasible: bool,
    /// Convex weights, one per atom (all zero when infeasible).
    pub weights: Vec<f64>,
    /// Reconstruction error `|Σ wᵢ aᵢ − p|`.
    pub residual: f64,
    /// Interior margin when requested, otherwise zero.
    pub margin: f64,
    /// Unit direction `d` with `d·p > max d·aᵢ`, present when infeasible.
    pub separating: Option<Vec<f64>>,
    /// `d·p − max d·aᵢ` for the separating direction.
    pub separation_gap: f64,
}

/// Default membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Decides whether `p` lies in the convex hull of `atoms`.
pub fn hull_membership(p: &[f64], atoms: &[Vec<f64>], tol: f64) -> Result<LPResult> {
    if atoms.is_empty() {
        return Err(Error::EmptyAtoms);
    }
    let d = p.len();
    if atoms.iter().any(|a| a.len() != d) {
        return Err(Error::Dimension("atom dimension differs from point".into()));
    }
    if p.iter().chain(atoms.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hull membership input"));
    }
    let n = atoms.len();
    let mut a = vec![vec![0.0; n]; d + 1];
    for (j, atom) in atoms.iter().enumerate() {
        for k in 0..d {
            a[k][j] = atom[k];
        }
        a[d][j] = 1.0;
    }
    let mut b = p.to_vec();
    b.push(1.0);
    let sol = solve_lp(&a, &b, &vec![0.0; n]);
    let mut weights: Vec<f64> = sol.x.iter().map(|w| w.max(0.0)).collect();
    let s: f64 = weights.iter().sum();
    if s > 0.0 {
        for w in weights.iter_mut() {
            *w /= s;
        }
    }
    let residual = reconstruction_error(p, atoms, &weights);
    if sol.status != LpStatus::Infeasible && residual <= tol {
        return Ok(LPResult {
            feasible: true,
            weights,
            residual,
            margin: 0.0,
            separating: None,
            separation_gap: 0.0,
        });
    }
    let mut dir: Vec<f64> = sol.duals[..d].to_vec();
    let nd = norm(&dir);
    if nd > 0.0 {
        for x in dir.iter_mut() {
            *x /= nd;
        }
    }
    let max_atom = atoms.iter().map(|a| dot(&dir, a)).fold(f64::NEG_INFINITY, f64::max);
    let gap = dot(&dir, p) - max_atom;
    Ok(LPResult {
        feasible: false,
        weights: vec![0.0; n],
        residual,
        margin: 0.0,
        separating: Some(dir),
        separation_gap: gap,
    })
}

pub fn reconstruction_error(p: &[f64], atoms: &[Vec<f64>], weights: &[f64]) -> f64 {
    let mut r = p.to_vec();
    for (a, w) in atoms.iter().zip(weights) {
        axpy(-w, a, &mut r);
    }
    norm(&r)
}

/// Flag attached to a zero interior margin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginFlag {
    Interior,
    BoundaryOrOutside,
}

/// Certified lower bound on the inradius of `hull(atoms)` around `p`: the
/// largest `t` with every probe `p ± t·e_k` in the hull, divided by `√d`.
/// Each probe length is obtained exactly by a linear program maximizing `t`.
pub fn interior_margin(p: &[f64], atoms: &[Vec<f64>]) -> Result<(f64, MarginFlag)> {
    let mem = hull_membership(p, atoms, MEMBERSHIP_TOL)?;
    if !mem.feasible {
        return Ok((0.0, MarginFlag::BoundaryOrOutside));
    }
    let d = p.len();
    let n = atoms.len();
    let mut t_min = f64::INFINITY;
    for k in 0..d {
        for sgn in [1.0, -1.0] {
            let mut a = vec![vec![0.0; n + 1]; d + 1];
            for (j, atom) in atoms.iter().enumerate() {
                for r in 0..d {
                    a[r][j] = atom[r];
                }
                a[d][j] = 1.0;
            }
            a[k][n] = -sgn;
            let mut b = p.to_vec();
            b.push(1.0);
            let mut c = vec![0.0; n + 1];
            c[n] = -1.0;
            let sol = solve_lp(&a, &b, &c);
            let t = match sol.status {
                LpStatus::Optimal => sol.x[n].max(0.0),
                _ => 0.0,
            };
            t_min = t_min.min(t);
            if t_min <= 0.0 {
                return Ok((0.0, MarginFlag::BoundaryOrOutside));
            }
        }
    }
    // Re-verify the joint probe set with a small safety contraction.
    let t = t_min * (1.0 - 1e-9);
    Ok((t / (d as f64).sqrt(), MarginFlag::Interior))
}

/// Reduces a convex decomposition to at most `d + 1` atoms by re-solving the
/// membership program on the support (basic solutions have at most `d + 1`
/// positive entries).
pub fn caratheodory_prune(p: &[f64], atoms: &[Vec<f64>], weights: &[f64]) -> Result<Vec<(usize, f64)>> {
    let support: Vec<usize> = (0..atoms.len()).filter(|&i| weights[i] > 0.0).collect();
    if support.len() <= p.len() + 1 {
        return Ok(support.into_iter().map(|i| (i, weights[i])).collect());
    }
    let sub: Vec<Vec<f64>> = support.iter().map(|&i| atoms[i].clone()).collect();
    let res = hull_membership(p, &sub, 1e-9)?;
    if !res.feasible {
        return Err(Error::Membership("support of a convex decomposition".into()));
    }
    Ok(support.into_iter().zip(res.weights).filter(|(_, w)| *w > 0.0).collect())
}
