//! Convex polytopes, simplices and exact simplex quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, dot, norm, rank_with_tol, solve_lp, LpStatus, Mat};

/// Tolerance for vertex/half-space consistency.
pub const REP_TOL: f64 = 1e-10;

/// Bounded convex polytope with both vertex and half-space representations.
/// Half-spaces read `normals[f]·x ≤ offsets[f]` with unit outward normals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    dim: usize,
    vertices: Vec<Vec<f64>>,
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    degenerate: bool,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Solves the square system `A x = b` by Gaussian elimination with partial
/// pivoting; `None` when singular relative to `tol`.
pub fn solve_square(a: &Mat, b: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = a.rows();
    let mut m = a.data().to_vec();
    let mut rhs = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs()))?;
        if m[p * n + c].abs() <= tol * scale {
            return None;
        }
        if p != c {
            for j in 0..n {
                m.swap(p * n + j, c * n + j);
            }
            rhs.swap(p, c);
        }
        for i in c + 1..n {
            let f = m[i * n + c] / m[c * n + c];
            if f != 0.0 {
                for j in c..n {
                    m[i * n + j] -= f * m[c * n + j];
                }
                rhs[i] -= f * rhs[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Some(x)
}

pub fn inverse(a: &Mat) -> Option<Mat> {
    let n = a.rows();
    let mut out = Mat::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_square(a, &e, 1e-14)?;
        for i in 0..n {
            out.set(i, j, col[i]);
        }
    }
    Some(out)
}

fn affine_dim(points: &[&Vec<f64>]) -> usize {
    if points.len() <= 1 {
        return 0;
    }
    let rows: Vec<Vec<f64>> = points[1..]
        .iter()
        .map(|p| p.iter().zip(points[0]).map(|(a, b)| a - b).collect())
        .collect();
    rank_with_tol(&Mat::from_rows(&rows).expect("rows"), 1e-9)
}

fn dedup_points(points: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !out.iter().any(|q| dist(q, &p) <= tol) {
            out.push(p);
        }
    }
    out
}

impl Polytope {
    /// Builds a polytope from both representations and validates them.
    pub fn from_parts(dim: usize, vertices: Vec<Vec<f64>>, normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if dim == 0 || vertices.is_empty() || normals.len() != offsets.len() {
            return Err(Error::Dimension("empty or inconsistent polytope".into()));
        }
        if vertices.iter().chain(normals.iter()).any(|v| v.len() != dim) {
            return Err(Error::Dimension("polytope coordinate length".into()));
        }
        if vertices
            .iter()
            .flatten()
            .chain(normals.iter().flatten())
            .chain(offsets.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("polytope"));
        }
        let mut nn = Vec::with_capacity(normals.len());
        let mut oo = Vec::with_capacity(normals.len());
        for (a, b) in normals.iter().zip(&offsets) {
            let l = norm(a);
            if l == 0.0 {
                return Err(Error::InvalidParameter("zero facet normal".into()));
            }
            nn.push(a.iter().map(|v| v / l).collect::<Vec<_>>());
            oo.push(b / l);
        }
        let scale = vertices.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for v in &vertices {
            for (a, b) in nn.iter().zip(&oo) {
                if dot(a, v) > b + REP_TOL * scale {
                    return Err(Error::InvalidParameter("vertex violates a half-space".into()));
                }
            }
        }
        let refs: Vec<&Vec<f64>> = vertices.iter().collect();
        let degenerate = affine_dim(&refs) < dim;
        if !degenerate {
            for (a, b) in nn.iter().zip(&oo) {
                let tight = vertices
                    .iter()
                    .filter(|v| (dot(a, v) - b).abs() <= REP_TOL * scale)
                    .count();
                if tight < dim {
                    return Err(Error::InvalidParameter(
                        "half-space tight at fewer than n vertices".into(),
                    ));
                }
            }
        }
        Ok(Polytope {
            dim,
            vertices,
            normals: nn,
            offsets: oo,
            degenerate,
        })
    }

    /// Vertex enumeration from half-spaces; redundant half-spaces are dropped.
    pub fn from_halfspaces(dim: usize, normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        let mut nn = Vec::new();
        let mut oo = Vec::new();
        for (a, b) in normals.iter().zip(&offsets) {
            let l = norm(a);
            if l == 0.0 {
                return Err(Error::InvalidParameter("zero facet normal".into()));
            }
            nn.push(a.iter().map(|v| v / l).collect::<Vec<_>>());
            oo.push(b / l);
        }
        let scale = oo.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut verts = Vec::new();
        for combo in combinations(nn.len(), dim) {
            let rows: Vec<Vec<f64>> = combo.iter().map(|&f| nn[f].clone()).collect();
            let a = Mat::from_rows(&rows)?;
            let b: Vec<f64> = combo.iter().map(|&f| oo[f]).collect();
            if let Some(x) = solve_square(&a, &b, 1e-12) {
                if nn.iter().zip(&oo).all(|(a, b)| dot(a, &x) <= b + 1e-11 * scale) {
                    verts.push(x);
                }
            }
        }
        let verts = dedup_points(verts, 1e-11 * scale);
        if verts.is_empty() {
            return Err(Error::InvalidParameter("empty or unbounded polytope".into()));
        }
        let vs = verts
            .iter()
            .fold(1.0f64, |m, v| v.iter().fold(m, |m, x| m.max(x.abs())));
        let mut keep_n = Vec::new();
        let mut keep_o = Vec::new();
        for (a, b) in nn.into_iter().zip(oo) {
            let tight = verts.iter().filter(|v| (dot(&a, v) - b).abs() <= REP_TOL * vs).count();
            let dup = keep_n
                .iter()
                .zip(&keep_o)
                .any(|(a2, b2): (&Vec<f64>, &f64)| dist(a2, &a) < 1e-12 && (b2 - b).abs() < 1e-12 * vs);
            if tight >= dim && !dup {
                keep_n.push(a);
                keep_o.push(b);
            }
        }
        Polytope::from_parts(dim, verts, keep_n, keep_o)
    }

    /// Convex hull of a point set (small inputs; facets by subset enumeration).
    pub fn from_vertices(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let pts = dedup_points(points, 1e-13);
        if pts.len() < dim + 1 {
            return Err(Error::InvalidParameter(
                "too few points for a full-dimensional hull".into(),
            ));
        }
        let scale = pts.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut normals: Vec<Vec<f64>> = Vec::new();
        let mut offsets: Vec<f64> = Vec::new();
        for combo in combinations(pts.len(), dim) {
            let base = &pts[combo[0]];
            let rows: Vec<Vec<f64>> = combo[1..]
                .iter()
                .map(|&i| pts[i].iter().zip(base).map(|(a, b)| a - b).collect())
                .collect();
            let Some(nrm) = hyperplane_normal(&rows, dim) else {
                continue;
            };
            let b = dot(&nrm, base);
            let side: Vec<f64> = pts.iter().map(|p| dot(&nrm, p) - b).collect();
            let pos = side.iter().any(|s| *s > 1e-11 * scale);
            let neg = side.iter().any(|s| *s < -1e-11 * scale);
            let (nrm, b) = match (pos, neg) {
                (true, true) => continue,
                (false, _) => (nrm, b),
                (true, false) => (nrm.iter().map(|v| -v).collect(), -b),
            };
            if !normals
                .iter()
                .zip(&offsets)
                .any(|(a, o)| dist(a, &nrm) < 1e-10 && (o - b).abs() < 1e-10 * scale)
            {
                normals.push(nrm);
                offsets.push(b);
            }
        }
        if normals.is_empty() {
            return Err(Error::InvalidParameter("degenerate point set".into()));
        }
        let verts: Vec<Vec<f64>> = pts
            .into_iter()
            .filter(|p| {
                let tight: Vec<Vec<f64>> = normals
                    .iter()
                    .zip(&offsets)
                    .filter(|(a, b)| (dot(a, p) - *b).abs() <= 1e-10 * scale)
                    .map(|(a, _)| a.clone())
                    .collect();
                !tight.is_empty() && rank_with_tol(&Mat::from_rows(&tight).expect("rows"), 1e-9) == dim
            })
            .collect();
        Polytope::from_parts(dim, verts, normals, offsets)
    }

    /// Axis-aligned box `[lo, hi]`.
    pub fn cuboid(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let n = lo.len();
        if hi.len() != n || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter("box needs lo < hi componentwise".into()));
        }
        let mut verts = Vec::with_capacity(1 << n);
        for mask in 0..(1usize << n) {
            verts.push((0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect());
        }
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            normals.push(e.clone());
            offsets.push(hi[i]);
            e[i] = -1.0;
            normals.push(e);
            offsets.push(-lo[i]);
        }
        Polytope::from_parts(n, verts, normals, offsets)
    }

    pub fn unit_cube(n: usize) -> Self {
        Polytope::cuboid(&vec![0.0; n], &vec![1.0; n]).expect("unit cube")
    }

    /// The simplex with the given `n + 1` vertices.
    pub fn simplex(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().saturating_sub(1);
        if n == 0 || points.iter().any(|p| p.len() != n) {
            return Err(Error::Dimension("simplex needs n+1 points in R^n".into()));
        }
        let s = Simplex::new(points.clone());
        if s.volume() <= 0.0 {
            return Err(Error::InvalidParameter("degenerate simplex".into()));
        }
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for skip in 0..=n {
            let face: Vec<&Vec<f64>> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, p)| p)
                .collect();
            let rows: Vec<Vec<f64>> = face[1..]
                .iter()
                .map(|p| p.iter().zip(face[0]).map(|(a, b)| a - b).collect())
                .collect();
            let mut nrm = hyperplane_normal(&rows, n).expect("nondegenerate face");
            let mut b = dot(&nrm, face[0]);
            if dot(&nrm, &points[skip]) > b {
                nrm.iter_mut().for_each(|v| *v = -*v);
                b = -b;
            }
            normals.push(nrm);
            offsets.push(b);
        }
        Polytope::from_parts(n, points, normals, offsets)
    }

    pub fn standard_simplex(n: usize) -> Self {
        let mut pts = vec![vec![0.0; n]];
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            pts.push(e);
        }
        Polytope::simplex(pts).expect("standard simplex")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `min_f (b_f − a_f·x)`: positive inside, zero on the boundary.
    pub fn depth(&self, x: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| b - dot(a, x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.depth(x) >= -tol
    }

    pub fn vertex_centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for v in &self.vertices {
            for i in 0..self.dim {
                c[i] += v[i];
            }
        }
        c.iter().map(|x| x / self.vertices.len() as f64).collect()
    }

    pub fn bbox(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for v in &self.vertices {
            for i in 0..self.dim {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max(dist(a, b));
            }
        }
        d
    }

    /// Width along a unit direction.
    pub fn width(&self, dir: &[f64]) -> f64 {
        let proj: Vec<f64> = self.vertices.iter().map(|v| dot(v, dir)).collect();
        proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - proj.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn tight_set(&self, v: &[f64]) -> Vec<usize> {
        let scale = self.vertices.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
        (0..self.normals.len())
            .filter(|&f| (dot(&self.normals[f], v) - self.offsets[f]).abs() <= REP_TOL * scale)
            .collect()
    }

    /// Vertex indices of each facet.
    pub fn facet_vertices(&self) -> Vec<Vec<usize>> {
        let tights: Vec<Vec<usize>> = self.vertices.iter().map(|v| self.tight_set(v)).collect();
        (0..self.normals.len())
            .map(|f| (0..self.vertices.len()).filter(|&i| tights[i].contains(&f)).collect())
            .collect()
    }

    /// Pairs of vertices joined by an edge.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let tights: Vec<Vec<usize>> = self.vertices.iter().map(|v| self.tight_set(v)).collect();
        let mut out = Vec::new();
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                let common: Vec<Vec<f64>> = tights[i]
                    .iter()
                    .filter(|f| tights[j].contains(f))
                    .map(|&f| self.normals[f].clone())
                    .collect();
                if common.len() >= self.dim - 1
                    && rank_with_tol(&Mat::from_rows(&common).expect("rows"), 1e-9) == self.dim - 1
                {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Triangulation by recursive fans from face centroids.
    pub fn triangulate(&self) -> Vec<Simplex> {
        if self.degenerate {
            return Vec::new();
        }
        let tights: Vec<Vec<usize>> = self.vertices.iter().map(|v| self.tight_set(v)).collect();
        let all: Vec<usize> = (0..self.vertices.len()).collect();
        self.fan(&all, self.dim, &tights)
            .into_iter()
            .map(Simplex::new)
            .collect()
    }

    fn fan(&self, face: &[usize], k: usize, tights: &[Vec<usize>]) -> Vec<Vec<Vec<f64>>> {
        if face.len() == k + 1 {
            return vec![face.iter().map(|&i| self.vertices[i].clone()).collect()];
        }
        let mut c = vec![0.0; self.dim];
        for &i in face {
            for j in 0..self.dim {
                c[j] += self.vertices[i][j];
            }
        }
        c.iter_mut().for_each(|x| *x /= face.len() as f64);
        let mut subfaces: Vec<Vec<usize>> = Vec::new();
        for f in 0..self.normals.len() {
            let sub: Vec<usize> = face.iter().copied().filter(|&i| tights[i].contains(&f)).collect();
            if sub.len() < k || sub.len() == face.len() || subfaces.contains(&sub) {
                continue;
            }
            let refs: Vec<&Vec<f64>> = sub.iter().map(|&i| &self.vertices[i]).collect();
            if affine_dim(&refs) == k - 1 {
                subfaces.push(sub);
            }
        }
        let mut out = Vec::new();
        for sub in subfaces {
            for mut s in self.fan(&sub, k - 1, tights) {
                s.push(c.clone());
                out.push(s);
            }
        }
        out
    }

    /// Exact volume via the fan triangulation; zero when degenerate.
    pub fn volume(&self) -> f64 {
        self.triangulate().iter().map(|s| s.volume()).sum()
    }

    /// Volume centroid.
    pub fn centroid(&self) -> Vec<f64> {
        let simplices = self.triangulate();
        let mut c = vec![0.0; self.dim];
        let mut v = 0.0;
        for s in &simplices {
            let w = s.volume();
            let sc = s.centroid();
            for i in 0..self.dim {
                c[i] += w * sc[i];
            }
            v += w;
        }
        if v == 0.0 {
            return self.vertex_centroid();
        }
        c.iter().map(|x| x / v).collect()
    }

    /// Image under `x ↦ shift + M x` for invertible `M`.
    pub fn transform(&self, m: &Mat, shift: &[f64]) -> Result<Polytope> {
        let inv = inverse(m).ok_or_else(|| Error::InvalidParameter("singular transform".into()))?;
        let inv_t = inv.transpose();
        let verts = self.vertices.iter().map(|v| {
            let mut y = m.mul_vec(v);
            y.iter_mut().zip(shift).for_each(|(a, b)| *a += b);
            y
        });
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for (a, b) in self.normals.iter().zip(&self.offsets) {
            let na = inv_t.mul_vec(a);
            let nb = b + dot(&na, shift);
            let l = norm(&na);
            normals.push(na.iter().map(|x| x / l).collect());
            offsets.push(nb / l);
        }
        Ok(Polytope {
            dim: self.dim,
            vertices: verts.collect(),
            normals,
            offsets,
            degenerate: self.degenerate,
        })
    }

    /// Intersection with the half-space `a·x ≤ b`.
    pub fn clip(&self, a: &[f64], b: f64) -> Result<Polytope> {
        let mut normals = self.normals.clone();
        let mut offsets = self.offsets.clone();
        normals.push(a.to_vec());
        offsets.push(b);
        Polytope::from_halfspaces(self.dim, normals, offsets)
    }

    /// Center and radius of the largest inscribed ball.
    pub fn chebyshev_center(&self) -> (Vec<f64>, f64) {
        // Variables: x⁺ (n), x⁻ (n), t, slacks (one per facet).
        let n = self.dim;
        let f = self.normals.len();
        let nv = 2 * n + 1 + f;
        let mut a = vec![vec![0.0; nv]; f];
        for r in 0..f {
            for j in 0..n {
                a[r][j] = self.normals[r][j];
                a[r][n + j] = -self.normals[r][j];
            }
            a[r][2 * n] = 1.0;
            a[r][2 * n + 1 + r] = 1.0;
        }
        let mut c = vec![0.0; nv];
        c[2 * n] = -1.0;
        let sol = solve_lp(&a, &self.offsets, &c);
        if sol.status != LpStatus::Optimal {
            return (self.vertex_centroid(), 0.0);
        }
        let x: Vec<f64> = (0..n).map(|j| sol.x[j] - sol.x[n + j]).collect();
        let r = self.depth(&x);
        (x, r.max(0.0))
    }
}

fn hyperplane_normal(rows: &[Vec<f64>], dim: usize) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return if dim == 1 { Some(vec![1.0]) } else { None };
    }
    let m = Mat::from_rows(rows).ok()?;
    if rank_with_tol(&m, 1e-10) != dim - 1 {
        return None;
    }
    crate::linalg::null_direction(&m).ok()
}

/// A closed simplex given by its `n + 1` vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    pub vertices: Vec<Vec<f64>>,
}

impl Simplex {
    pub fn new(vertices: Vec<Vec<f64>>) -> Self {
        Simplex { vertices }
    }

    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn volume(&self) -> f64 {
        let n = self.dim();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, self.vertices[i + 1][j] - self.vertices[0][j]);
            }
        }
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        m.det().abs() / fact
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.dim();
        let mut c = vec![0.0; n];
        for v in &self.vertices {
            for i in 0..n {
                c[i] += v[i];
            }
        }
        c.iter().map(|x| x / (n + 1) as f64).collect()
    }

    /// Point with the given barycentric coordinates.
    pub fn point(&self, bary: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = vec![0.0; n];
        for (v, l) in self.vertices.iter().zip(bary) {
            for i in 0..n {
                x[i] += l * v[i];
            }
        }
        x
    }

    /// `∫_S f` using the given rule.
    pub fn integrate(&self, rule: &SimplexRule, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let vol = self.volume();
        let mut s = 0.0;
        for (b, w) in rule.points.iter().zip(&rule.weights) {
            s += w * f(&self.point(b));
        }
        vol * s
    }

    /// Total area of the boundary facets.
    pub fn surface_area(&self) -> f64 {
        let n = self.dim();
        (0..=n)
            .map(|skip| {
                let face: Vec<&Vec<f64>> = self
                    .vertices
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, p)| p)
                    .collect();
                facet_measure(&face)
            })
            .sum()
    }
}

/// `(n−1)`-dimensional measure of the simplex spanned by `n` points in R^n.
pub fn facet_measure(face: &[&Vec<f64>]) -> f64 {
    let k = face.len() - 1;
    if k == 0 {
        return 1.0;
    }
    let rows: Vec<Vec<f64>> = face[1..]
        .iter()
        .map(|p| p.iter().zip(face[0]).map(|(a, b)| a - b).collect())
        .collect();
    let mut gram = Mat::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram.set(i, j, dot(&rows[i], &rows[j]));
        }
    }
    let fact: f64 = (1..=k).map(|x| x as f64).product();
    gram.det().max(0.0).sqrt() / fact
}

/// Grundmann–Möller rule on the simplex in barycentric coordinates, exact
/// for polynomials of degree `2s + 1`. Weights are normalized to sum to one.
#[derive(Clone, Debug)]
pub struct SimplexRule {
    pub degree: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

impl SimplexRule {
    /// Rule exact up to at least `degree` on `n`-simplices.
    pub fn new(n: usize, degree: usize) -> Self {
        let s = degree / 2;
        let d = 2 * s + 1;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
        for i in 0..=s {
            let denom = (d + n - 2 * i) as f64;
            let w =
                (-1f64).powi(i as i32) * 2f64.powi(-2 * s as i32) * denom.powi(d as i32) / (fact(i) * fact(d + n - i));
            for beta in compositions(s - i, n + 1) {
                points.push(beta.iter().map(|&b| (2 * b + 1) as f64 / denom).collect());
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        SimplexRule {
            degree: d,
            points,
            weights,
        }
    }
}

/// Uniform sample in a simplex from `n + 1` exponential variates.
pub fn uniform_in_simplex<R: rand::Rng>(s: &Simplex, rng: &mut R) -> Vec<f64> {
    let n = s.dim();
    let mut e: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let t: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= t);
    s.point(&e)
}
