//! Diamond cells and their exhaustion of convex targets by disjoint scaled
//! copies.
//!
//! Copies sit on a multiscale lattice. At scale `k` the admissible sites are
//! integer vectors `z` with odd coordinate sum; in the stretched coordinates
//! `w' = u'/r_max`, `w_n = 2u_n/(ε r_max) − 1` the symmetric diamond at site
//! `z` is the ℓ¹ ball of radius `2^{-k}` around `2^{-k} z − e_n`. For `θ = ½`
//! these balls and their gaps nest across scales (a rhombus tiling in 2D, the
//! octahedral part of the tetrahedral–octahedral honeycomb in 3D), so a copy
//! is disjoint from every coarser copy as soon as its center is uncovered.
//! Other `θ` do not nest, so copies of the diamond and its upside-down twin
//! are dropped along vertical columns instead, each to the lowest height where
//! separating axes show it clear of the copies already placed.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::linalg::{dot, norm, Mat};

/// Default uncovered-volume budget.
pub const DEFAULT_TAU: f64 = 0.05;
/// Default number of dyadic scales below `r_max` (floor `2^{-12} r_max`).
pub const DEFAULT_FLOOR_LEVELS: u32 = 12;

/// The bipyramid `{x : g(x_n) > εθ(1−θ) Σ_{i<n} |x_i|}` with apexes `0`,
/// `ε e_n` and waist vertices `±e_i + εθ e_n`.
pub fn diamond(n: usize, eps: f64, theta: f64) -> Result<Polytope> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("diamond needs n >= 2, got {n}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta = {theta} not in (0,1)")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    let mut verts = vec![vec![0.0; n]];
    let mut top = vec![0.0; n];
    top[n - 1] = eps;
    verts.push(top);
    for i in 0..n - 1 {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; n];
            v[i] = s;
            v[n - 1] = eps * theta;
            verts.push(v);
        }
    }
    let c = eps * theta * (1.0 - theta);
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for mask in 0..(1usize << (n - 1)) {
        let s: Vec<f64> = (0..n - 1)
            .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        let mut lower: Vec<f64> = s.iter().map(|si| c * si).collect();
        lower.push(-(1.0 - theta));
        normals.push(lower);
        offsets.push(0.0);
        let mut upper: Vec<f64> = s.iter().map(|si| c * si).collect();
        upper.push(theta);
        normals.push(upper);
        offsets.push(theta * eps);
    }
    Polytope::from_parts(n, verts, normals, offsets)
}

/// Closed-form diamond volume `(1/n) · 2^{n−1}/(n−1)! · ε`.
pub fn diamond_volume(n: usize, eps: f64) -> f64 {
    let fact: f64 = (1..n).map(|k| k as f64).product();
    2f64.powi(n as i32 - 1) / fact * eps / n as f64
}

/// A diamond prototype placed in the frame `Q`: the global shape is `Q·D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiamondCell {
    pub n: usize,
    pub eps: f64,
    pub theta: f64,
    pub frame: Mat,
}

impl DiamondCell {
    pub fn new(n: usize, eps: f64, theta: f64, frame: Mat) -> Result<Self> {
        diamond(n, eps, theta)?;
        if frame.rows() != n || frame.cols() != n {
            return Err(Error::Dimension("frame must be n x n".into()));
        }
        Ok(DiamondCell { n, eps, theta, frame })
    }

    pub fn axis_aligned(n: usize, eps: f64, theta: f64) -> Result<Self> {
        DiamondCell::new(n, eps, theta, Mat::identity(n))
    }

    pub fn symmetric(&self) -> bool {
        self.theta == 0.5
    }

    /// The diamond in its own coordinates.
    pub fn local(&self) -> Polytope {
        diamond(self.n, self.eps, self.theta).expect("validated")
    }

    /// The upside-down diamond `R·D + ε e_n`, `R` flipping the last axis.
    pub fn local_mirror(&self) -> Polytope {
        let mut r = Mat::identity(self.n);
        r.set(self.n - 1, self.n - 1, -1.0);
        let mut shift = vec![0.0; self.n];
        shift[self.n - 1] = self.eps;
        self.local().transform(&r, &shift).expect("reflection")
    }

    /// The prototype in the global orientation, apex at the origin.
    pub fn polytope(&self) -> Polytope {
        self.local()
            .transform(&self.frame, &vec![0.0; self.n])
            .expect("rotation")
    }

    pub fn volume(&self) -> f64 {
        diamond_volume(self.n, self.eps)
    }

    /// Signed distance to the boundary of the unit-scale shape (positive
    /// inside); `y` is in local coordinates.
    pub fn local_depth(&self, y: &[f64], mirrored: bool) -> f64 {
        let n = self.n;
        let (eps, th) = (self.eps, self.theta);
        let yn = if mirrored { eps - y[n - 1] } else { y[n - 1] };
        let l1: f64 = y[..n - 1].iter().map(|v| v.abs()).sum();
        let c = eps * th * (1.0 - th);
        let a2 = c * c * (n - 1) as f64;
        let lower = ((1.0 - th) * yn - c * l1) / (a2 + (1.0 - th) * (1.0 - th)).sqrt();
        let upper = (th * (eps - yn) - c * l1) / (a2 + th * th).sqrt();
        lower.min(upper)
    }

    /// Local vertex list of the unit-scale shape.
    pub fn local_vertices(&self, mirrored: bool) -> Vec<Vec<f64>> {
        if mirrored {
            self.local_mirror().vertices().to_vec()
        } else {
            self.local().vertices().to_vec()
        }
    }

    /// Volume centroid of the unit-scale shape in local coordinates.
    pub fn local_centroid(&self, mirrored: bool) -> Vec<f64> {
        let n = self.n;
        let (eps, th) = (self.eps, self.theta);
        let lo = th * eps;
        let hi = (1.0 - th) * eps;
        let w = n as f64 + 1.0;
        // A pyramid over an (n-1)-dimensional base has its centroid at height h/(n+1).
        let lower_c = lo - lo / w;
        let upper_c = lo + hi / w;
        let mut c = vec![0.0; n];
        c[n - 1] = th * lower_c + (1.0 - th) * upper_c;
        if mirrored {
            c[n - 1] = eps - c[n - 1];
        }
        c
    }
}

/// A scaled, translated copy `center + scale·Q·S` where `S` is the diamond or,
/// when `mirrored`, the upside-down diamond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub center: Vec<f64>,
    pub scale: f64,
    pub mirrored: bool,
}

/// Multiscale lattice of diamond sites in the frame of a prototype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub cell: DiamondCell,
    pub origin: Vec<f64>,
    pub r_max: f64,
}

impl Lattice {
    pub fn scale(&self, k: u32) -> f64 {
        self.r_max * 0.5f64.powi(k as i32)
    }

    pub fn u_of_x(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        self.cell.frame.tmul_vec(&d)
    }

    pub fn x_of_u(&self, u: &[f64]) -> Vec<f64> {
        let mut x = self.cell.frame.mul_vec(u);
        x.iter_mut().zip(&self.origin).for_each(|(a, b)| *a += b);
        x
    }

    /// Site coordinates `t = (w + e_n)/h` at scale `k`.
    pub fn site_coords(&self, k: u32, u: &[f64]) -> Vec<f64> {
        let n = self.cell.n;
        let h = 0.5f64.powi(k as i32);
        let mut t: Vec<f64> = u.iter().map(|v| v / self.r_max / h).collect();
        t[n - 1] = 2.0 * u[n - 1] / (self.cell.eps * self.r_max) / h;
        t
    }

    /// Lowest point (in `u`) and orientation of the copy at site `z`.
    pub fn site(&self, k: u32, z: &[i64]) -> (Vec<f64>, bool) {
        let n = self.cell.n;
        let r = self.scale(k);
        let eps = self.cell.eps;
        let mut p: Vec<f64> = z.iter().map(|&zi| r * zi as f64).collect();
        let zn = z[n - 1];
        if zn.rem_euclid(2) == 1 {
            p[n - 1] = eps * r * (zn - 1) as f64 / 2.0;
            (p, false)
        } else {
            p[n - 1] = eps * r * (zn as f64 / 2.0 - 1.0 + self.cell.theta);
            (p, !self.cell.symmetric())
        }
    }

    /// Odd-sum site nearest to `t`; for `θ = ½` it is the only site whose
    /// cell can contain the point.
    pub fn nearest_site(t: &[f64]) -> Vec<i64> {
        let mut z: Vec<i64> = t.iter().map(|v| v.round() as i64).collect();
        if z.iter().sum::<i64>().rem_euclid(2) == 0 {
            let mut best = 0;
            let mut err = -1.0;
            for i in 0..t.len() {
                let e = (t[i] - z[i] as f64).abs();
                if e > err {
                    err = e;
                    best = i;
                }
            }
            z[best] += if t[best] >= z[best] as f64 { 1 } else { -1 };
        }
        z
    }

    pub fn placement(&self, k: u32, z: &[i64]) -> Placement {
        let (p, mirrored) = self.site(k, z);
        Placement {
            center: self.x_of_u(&p),
            scale: self.scale(k),
            mirrored,
        }
    }

    /// Signed distance (in `u` units) of a point to the copy at site `z`.
    pub fn depth_in_site(&self, k: u32, z: &[i64], u: &[f64]) -> f64 {
        let (p, mirrored) = self.site(k, z);
        let r = self.scale(k);
        let y: Vec<f64> = u.iter().zip(&p).map(|(a, b)| (a - b) / r).collect();
        r * self.cell.local_depth(&y, mirrored)
    }
}

/// Outcome of [`CellComplex::locate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Located {
    Cell(usize),
    Residual,
}

/// Disjoint copies of a diamond prototype inside a convex target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellComplex {
    pub target: Polytope,
    pub prototype: Polytope,
    pub placements: Vec<Placement>,
    pub uncovered_volume: f64,
    pub lattice: Lattice,
    /// Lattice site `(k, z)` of each placement when the symmetric lattice
    /// was used; empty otherwise.
    pub sites: Vec<(u32, Vec<i64>)>,
    #[serde(skip)]
    index: OnceLock<CellIndex>,
}

impl PartialEq for CellComplex {
    fn eq(&self, other: &Self) -> bool {
        self.target == other.target
            && self.placements == other.placements
            && self.uncovered_volume == other.uncovered_volume
            && self.lattice == other.lattice
            && self.sites == other.sites
    }
}

/// Options for [`vitali_fill_with`].
#[derive(Clone, Debug)]
pub struct FillOptions {
    pub tau: f64,
    pub floor_levels: u32,
    /// Lattice origin; defaults to the coordinate origin.
    pub origin: Option<Vec<f64>>,
}

impl Default for FillOptions {
    fn default() -> Self {
        FillOptions {
            tau: DEFAULT_TAU,
            floor_levels: DEFAULT_FLOOR_LEVELS,
            origin: None,
        }
    }
}

/// Packs disjoint scaled copies of `proto` into `target` until the uncovered
/// volume is at most `tau·vol(target)`.
pub fn vitali_fill(target: &Polytope, proto: &DiamondCell, tau: f64) -> Result<CellComplex> {
    vitali_fill_with(
        target,
        proto,
        &FillOptions {
            tau,
            ..FillOptions::default()
        },
    )
}

/// Separating-axis data for the two orientations of a prototype.
struct Axes {
    axes: Vec<Vec<f64>>,
    // (min, max) of the unit shape projected on each axis, per orientation.
    extent: Vec<[(f64, f64); 2]>,
}

impl Axes {
    fn new(cell: &DiamondCell) -> Self {
        let shapes = [cell.local(), cell.local_mirror()];
        let mut axes: Vec<Vec<f64>> = Vec::new();
        let push = |a: Vec<f64>, axes: &mut Vec<Vec<f64>>| {
            let l = norm(&a);
            if l < 1e-12 {
                return;
            }
            let a: Vec<f64> = a.iter().map(|v| v / l).collect();
            if !axes.iter().any(|b| dot(b, &a).abs() > 1.0 - 1e-12) {
                axes.push(a);
            }
        };
        for s in &shapes {
            for nrm in s.normals() {
                push(nrm.clone(), &mut axes);
            }
        }
        if cell.n == 3 {
            let dirs: Vec<Vec<f64>> = shapes
                .iter()
                .flat_map(|s| {
                    s.edges()
                        .into_iter()
                        .map(|(i, j)| {
                            s.vertices()[j]
                                .iter()
                                .zip(&s.vertices()[i])
                                .map(|(a, b)| a - b)
                                .collect()
                        })
                        .collect::<Vec<Vec<f64>>>()
                })
                .collect();
            for (i, a) in dirs.iter().enumerate() {
                for b in &dirs[i + 1..] {
                    let c = crate::linalg::wedge([a[0], a[1], a[2]], [b[0], b[1], b[2]]);
                    push(c.to_vec(), &mut axes);
                }
            }
        }
        let extent = axes
            .iter()
            .map(|a| {
                let mut e = [(0.0, 0.0); 2];
                for (o, s) in shapes.iter().enumerate() {
                    let proj: Vec<f64> = s.vertices().iter().map(|v| dot(v, a)).collect();
                    e[o] = (
                        proj.iter().cloned().fold(f64::INFINITY, f64::min),
                        proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    );
                }
                e
            })
            .collect();
        Axes { axes, extent }
    }

    /// Open interval of heights `b` for which the copy with lowest point
    /// `(c', b)` overlaps the copy with lowest point `q`; `None` if never.
    fn forbidden(&self, c: &[f64], r: f64, m: bool, q: &[f64], r2: f64, m2: bool, tol: f64) -> Option<(f64, f64)> {
        let n = q.len();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (a, e) in self.axes.iter().zip(&self.extent) {
            let ac: f64 = (0..n - 1).map(|i| a[i] * c[i]).sum();
            let an = a[n - 1];
            let c2 = dot(a, q);
            let (l2, h2) = (c2 + r2 * e[m2 as usize].0, c2 + r2 * e[m2 as usize].1);
            let (el, eh) = e[m as usize];
            let alpha = l2 + tol - ac - r * eh;
            let beta = h2 - tol - ac - r * el;
            if an.abs() < 1e-14 {
                if !(alpha < 0.0 && beta > 0.0) {
                    return None;
                }
                continue;
            }
            let (a1, b1) = if an > 0.0 {
                (alpha / an, beta / an)
            } else {
                (beta / an, alpha / an)
            };
            lo = lo.max(a1);
            hi = hi.min(b1);
            if lo >= hi {
                return None;
            }
        }
        Some((lo, hi))
    }
}

/// Bucket index of copies by level, for point and box queries in `u`.
#[derive(Clone, Debug, Default)]
struct CellIndex {
    map: HashMap<(u32, Vec<i64>), Vec<usize>>,
    levels: u32,
}

impl CellIndex {
    fn widths(lattice: &Lattice, j: u32) -> (f64, f64) {
        let r = lattice.scale(j);
        (2.0 * r, lattice.cell.eps * r)
    }

    fn keys(lattice: &Lattice, j: u32, lo: &[f64], hi: &[f64]) -> Vec<Vec<i64>> {
        let n = lo.len();
        let (wp, wn) = CellIndex::widths(lattice, j);
        let klo: Vec<i64> = (0..n)
            .map(|i| (lo[i] / if i + 1 == n { wn } else { wp }).floor() as i64)
            .collect();
        let khi: Vec<i64> = (0..n)
            .map(|i| (hi[i] / if i + 1 == n { wn } else { wp }).floor() as i64)
            .collect();
        let mut out = Vec::new();
        let mut z = klo.clone();
        loop {
            out.push(z.clone());
            let mut i = 0;
            loop {
                if i == n {
                    return out;
                }
                z[i] += 1;
                if z[i] <= khi[i] {
                    break;
                }
                z[i] = klo[i];
                i += 1;
            }
        }
    }

    fn insert(&mut self, lattice: &Lattice, id: usize, j: u32, apex: &[f64]) {
        let n = apex.len();
        let r = lattice.scale(j);
        let mut lo = apex.to_vec();
        let mut hi = apex.to_vec();
        for i in 0..n - 1 {
            lo[i] -= r;
            hi[i] += r;
        }
        hi[n - 1] += lattice.cell.eps * r;
        for key in CellIndex::keys(lattice, j, &lo, &hi) {
            self.map.entry((j, key)).or_default().push(id);
        }
        self.levels = self.levels.max(j + 1);
    }

    /// Copies whose bounding boxes may meet the box `[lo, hi]`.
    fn query(&self, lattice: &Lattice, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        for j in 0..self.levels {
            for key in CellIndex::keys(lattice, j, lo, hi) {
                if let Some(ids) = self.map.get(&(j, key)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn site_range(lo: &[f64], hi: &[f64], pad: i64) -> Vec<Vec<i64>> {
    let n = lo.len();
    let los: Vec<i64> = lo.iter().map(|v| v.floor() as i64 - pad).collect();
    let his: Vec<i64> = hi.iter().map(|v| v.ceil() as i64 + pad).collect();
    let mut out = Vec::new();
    let mut z = los.clone();
    loop {
        if z.iter().sum::<i64>().rem_euclid(2) == 1 {
            out.push(z.clone());
        }
        let mut i = 0;
        loop {
            if i == n {
                return out;
            }
            z[i] += 1;
            if z[i] <= his[i] {
                break;
            }
            z[i] = los[i];
            i += 1;
        }
    }
}

fn children(z: &[i64]) -> Vec<Vec<i64>> {
    let base: Vec<i64> = z.iter().map(|v| 2 * v).collect();
    let lo: Vec<f64> = base.iter().map(|v| (*v - 1) as f64).collect();
    let hi: Vec<f64> = base.iter().map(|v| (*v + 1) as f64).collect();
    site_range(&lo, &hi, 0)
}

/// Target half-spaces `a·u ≤ b` in lattice coordinates.
fn target_in_u(target: &Polytope, lattice: &Lattice) -> (Vec<Vec<f64>>, Vec<f64>) {
    let normals: Vec<Vec<f64>> = target
        .normals()
        .iter()
        .map(|a| lattice.cell.frame.tmul_vec(a))
        .collect();
    let offsets: Vec<f64> = target
        .normals()
        .iter()
        .zip(target.offsets())
        .map(|(a, b)| b - dot(a, &lattice.origin))
        .collect();
    (normals, offsets)
}

pub fn vitali_fill_with(target: &Polytope, proto: &DiamondCell, opts: &FillOptions) -> Result<CellComplex> {
    if !(opts.tau > 0.0 && opts.tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau = {} not in (0,1)", opts.tau)));
    }
    if target.dim() != proto.n {
        return Err(Error::Dimension("target and prototype dimensions differ".into()));
    }
    let vol_t = target.volume();
    if vol_t <= 0.0 {
        return Err(Error::InvalidParameter("target has no interior".into()));
    }
    let diam = target.diameter();
    let r_max = 2f64.powi(diam.log2().ceil() as i32).min(1.0);
    let lattice = Lattice {
        cell: proto.clone(),
        origin: opts.origin.clone().unwrap_or_else(|| vec![0.0; proto.n]),
        r_max,
    };
    let (placements, sites, covered) = if proto.symmetric() {
        lattice_fill(target, &lattice, opts, vol_t)
    } else {
        drop_fill(target, &lattice, opts, vol_t)
    };
    if vol_t - covered > opts.tau * vol_t {
        return Err(Error::CoverageFloor {
            achieved: covered / vol_t,
            required: 1.0 - opts.tau,
        });
    }
    let uncovered = (vol_t - covered).max(0.0);
    log::debug!(
        "vitali_fill: {} placements, uncovered fraction {:.3e}",
        placements.len(),
        uncovered / vol_t
    );
    Ok(CellComplex {
        target: target.clone(),
        prototype: proto.polytope(),
        placements,
        uncovered_volume: uncovered,
        lattice,
        sites,
        index: OnceLock::new(),
    })
}

type FillOutput = (Vec<Placement>, Vec<(u32, Vec<i64>)>, f64);

/// Symmetric lattice: a copy is accepted when it lies in the target and its
/// centroid is not covered by a coarser copy.
fn lattice_fill(target: &Polytope, lattice: &Lattice, opts: &FillOptions, vol_t: f64) -> FillOutput {
    let proto = &lattice.cell;
    let n = proto.n;
    let local_q = proto.local_vertices(false);
    let cq = proto.local_centroid(false);
    let cell_vol = proto.volume();
    let scale_x = target.vertices().iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol_in = 1e-12 * scale_x;

    let mut sites: Vec<(u32, Vec<i64>)> = Vec::new();
    let mut placements = Vec::new();
    let mut index: HashMap<(u32, Vec<i64>), usize> = HashMap::new();
    let mut covered = 0.0;

    let u_verts: Vec<Vec<f64>> = target.vertices().iter().map(|v| lattice.u_of_x(v)).collect();
    let t0: Vec<Vec<f64>> = u_verts.iter().map(|u| lattice.site_coords(0, u)).collect();
    let lo: Vec<f64> = (0..n)
        .map(|i| t0.iter().map(|t| t[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..n)
        .map(|i| t0.iter().map(|t| t[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut frontier: BTreeSet<Vec<i64>> = site_range(&lo, &hi, 1).into_iter().collect();

    for k in 0..=opts.floor_levels {
        let r = lattice.scale(k);
        let mut next: BTreeSet<Vec<i64>> = BTreeSet::new();
        for z in &frontier {
            let (p, _) = lattice.site(k, z);
            let xs: Vec<Vec<f64>> = local_q
                .iter()
                .map(|v| {
                    let u: Vec<f64> = v.iter().zip(&p).map(|(a, b)| b + r * a).collect();
                    lattice.x_of_u(&u)
                })
                .collect();
            let outside = target
                .normals()
                .iter()
                .zip(target.offsets())
                .any(|(a, b)| xs.iter().all(|x| dot(a, x) >= b - tol_in));
            if outside {
                continue;
            }
            let cu: Vec<f64> = cq.iter().zip(&p).map(|(a, b)| b + r * a).collect();
            if covered_by(lattice, &index, k, &cu) {
                continue;
            }
            if xs.iter().all(|x| target.contains(x, tol_in)) {
                index.insert((k, z.clone()), placements.len());
                placements.push(Placement {
                    center: lattice.x_of_u(&p),
                    scale: r,
                    mirrored: false,
                });
                sites.push((k, z.clone()));
                covered += cell_vol * r.powi(n as i32);
            }
            next.extend(children(z));
        }
        if vol_t - covered <= opts.tau * vol_t {
            break;
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    (placements, sites, covered)
}

fn covered_by(lattice: &Lattice, index: &HashMap<(u32, Vec<i64>), usize>, k: u32, u: &[f64]) -> bool {
    (0..k).any(|j| {
        let z = Lattice::nearest_site(&lattice.site_coords(j, u));
        index.contains_key(&(j, z.clone())) && lattice.depth_in_site(j, &z, u) > 0.0
    })
}

/// Heights where the vertical line through `c'` meets the copy with lowest
/// point `q` (closed interval), if it does.
fn line_hit(cell: &DiamondCell, c: &[f64], q: &[f64], r: f64, mirrored: bool) -> Option<(f64, f64)> {
    let n = q.len();
    let l: f64 = (0..n - 1).map(|i| (c[i] - q[i]).abs()).sum::<f64>() / r;
    if l >= 1.0 {
        return None;
    }
    let th = if mirrored { 1.0 - cell.theta } else { cell.theta };
    let er = cell.eps * r;
    Some((q[n - 1] + er * th * l, q[n - 1] + er * (1.0 - (1.0 - th) * l)))
}

/// Interval where `a·(c', y) ≤ b` holds for every half-space.
fn line_in_target(normals: &[Vec<f64>], offsets: &[f64], c: &[f64], shift: &[f64]) -> (f64, f64) {
    let n = normals[0].len();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for ((a, b), s) in normals.iter().zip(offsets).zip(shift) {
        let ac: f64 = (0..n - 1).map(|i| a[i] * c[i]).sum();
        let rhs = b - ac - s;
        let an = a[n - 1];
        if an.abs() < 1e-14 {
            if rhs < 0.0 {
                return (1.0, 0.0);
            }
        } else if an > 0.0 {
            hi = hi.min(rhs / an);
        } else {
            lo = lo.max(rhs / an);
        }
    }
    (lo, hi)
}

/// Uncovered sub-intervals of `[lo, hi]` on the vertical line through `c'`.
fn line_gaps(
    lattice: &Lattice,
    placed: &[(Vec<f64>, f64, bool)],
    idx: &CellIndex,
    c: &[f64],
    lo: f64,
    hi: f64,
) -> Vec<(f64, f64)> {
    let n = c.len() + 1;
    let mut blo = c.to_vec();
    blo.push(lo);
    let mut bhi = c.to_vec();
    bhi.push(hi);
    let _ = n;
    let mut hits: Vec<(f64, f64)> = idx
        .query(lattice, &blo, &bhi)
        .into_iter()
        .filter_map(|id| {
            let (q, r, m) = &placed[id];
            line_hit(&lattice.cell, c, q, *r, *m)
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gaps = Vec::new();
    let mut cur = lo;
    for (a, b) in hits {
        if a > cur {
            gaps.push((cur, a.min(hi)));
        }
        cur = cur.max(b);
        if cur >= hi {
            break;
        }
    }
    if cur < hi {
        gaps.push((cur, hi));
    }
    gaps.retain(|g| g.1 > g.0);
    gaps
}

/// General `θ`: copies of both orientations are dropped along vertical
/// columns, each to the lowest height where it fits, coarse to fine. Column
/// positions lie on the dyadic in-plane grid and are refined where their line
/// still crosses uncovered target.
fn drop_fill(target: &Polytope, lattice: &Lattice, opts: &FillOptions, vol_t: f64) -> FillOutput {
    let proto = &lattice.cell;
    let n = proto.n;
    let axes = Axes::new(proto);
    let (normals, offsets) = target_in_u(target, lattice);
    let shapes = [proto.local_vertices(false), proto.local_vertices(true)];
    // Unit-scale support of each orientation along each target normal.
    let support: Vec<Vec<f64>> = shapes
        .iter()
        .map(|vs| {
            normals
                .iter()
                .map(|a| vs.iter().map(|v| dot(a, v)).fold(f64::NEG_INFINITY, f64::max))
                .collect()
        })
        .collect();
    let zero_shift = vec![0.0; normals.len()];
    let cell_vol = proto.volume();
    let eps = proto.eps;

    let mut placed: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    let mut idx = CellIndex::default();
    let mut covered = 0.0;

    let u_verts: Vec<Vec<f64>> = target.vertices().iter().map(|v| lattice.u_of_x(v)).collect();
    let lo: Vec<f64> = (0..n - 1)
        .map(|i| u_verts.iter().map(|u| u[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..n - 1)
        .map(|i| u_verts.iter().map(|u| u[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut cols: BTreeSet<Vec<i64>> = BTreeSet::new();
    {
        let r0 = lattice.scale(0);
        let klo: Vec<i64> = lo.iter().map(|v| (v / r0).floor() as i64 - 1).collect();
        let khi: Vec<i64> = hi.iter().map(|v| (v / r0).ceil() as i64 + 1).collect();
        let mut z = klo.clone();
        'outer: loop {
            cols.insert(z.clone());
            let mut i = 0;
            loop {
                if i == n - 1 {
                    break 'outer;
                }
                z[i] += 1;
                if z[i] <= khi[i] {
                    break;
                }
                z[i] = klo[i];
                i += 1;
            }
        }
    }

    for k in 0..=opts.floor_levels {
        let r = lattice.scale(k);
        let er = eps * r;
        let tol = 1e-12 * r;
        for z in &cols {
            let c: Vec<f64> = z.iter().map(|&v| v as f64 * r).collect();
            let (tlo, thi) = line_in_target(&normals, &offsets, &c, &zero_shift);
            if thi - tlo < er {
                continue;
            }
            for (g0, g1) in line_gaps(lattice, &placed, &idx, &c, tlo, thi) {
                if g1 - g0 < er * (1.0 - 1e-9) {
                    continue;
                }
                let mut blo = c.iter().map(|v| v - r).collect::<Vec<f64>>();
                blo.push(g0);
                let mut bhi = c.iter().map(|v| v + r).collect::<Vec<f64>>();
                bhi.push(g1);
                let near = idx.query(lattice, &blo, &bhi);
                // Allowed range and forbidden intervals per orientation.
                let mut allowed = [(0.0, 0.0); 2];
                let mut forb: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
                for m in 0..2 {
                    let shift: Vec<f64> = support[m].iter().map(|s| r * s - tol).collect();
                    let (a0, a1) = line_in_target(&normals, &offsets, &c, &shift);
                    allowed[m] = (a0.max(g0 - 1e-9 * er), a1.min(g1 - er + 1e-9 * er));
                    for &id in &near {
                        let (q, r2, m2) = &placed[id];
                        if let Some(iv) = axes.forbidden(&c, r, m == 1, q, *r2, *m2, tol) {
                            forb[m].push(iv);
                        }
                    }
                }
                let mut cur = f64::NEG_INFINITY;
                loop {
                    let mut best: Option<(f64, usize)> = None;
                    for m in 0..2 {
                        let mut b = cur.max(allowed[m].0);
                        loop {
                            let mut moved = false;
                            for &(l, h) in &forb[m] {
                                if l < b && b < h {
                                    b = h;
                                    moved = true;
                                }
                            }
                            if !moved {
                                break;
                            }
                        }
                        // Near-ties go to the upright copy so columns stay uniform.
                        if b <= allowed[m].1 && best.map_or(true, |(bb, _)| b < bb - 1e-9 * er) {
                            best = Some((b, m));
                        }
                    }
                    let Some((b, m)) = best else { break };
                    let mut q = c.clone();
                    q.push(b);
                    let id = placed.len();
                    placed.push((q.clone(), r, m == 1));
                    idx.insert(lattice, id, k, &q);
                    covered += cell_vol * r.powi(n as i32);
                    for mm in 0..2 {
                        if let Some(iv) = axes.forbidden(&c, r, mm == 1, &q, r, m == 1, tol) {
                            forb[mm].push(iv);
                        }
                    }
                    cur = b;
                }
            }
        }
        if vol_t - covered <= opts.tau * vol_t || k == opts.floor_levels {
            break;
        }
        let rn = lattice.scale(k + 1);
        let mut next = BTreeSet::new();
        for z in &cols {
            let base: Vec<i64> = z.iter().map(|v| 2 * v).collect();
            let lo: Vec<f64> = base.iter().map(|v| (v - 1) as f64).collect();
            let hi: Vec<f64> = base.iter().map(|v| (v + 1) as f64).collect();
            let mut cand = Vec::new();
            let mut w: Vec<i64> = lo.iter().map(|v| *v as i64).collect();
            'grid: loop {
                cand.push(w.clone());
                let mut i = 0;
                loop {
                    if i == n - 1 {
                        break 'grid;
                    }
                    w[i] += 1;
                    if w[i] as f64 <= hi[i] {
                        break;
                    }
                    w[i] = lo[i] as i64;
                    i += 1;
                }
            }
            for w in cand {
                if next.contains(&w) {
                    continue;
                }
                let c: Vec<f64> = w.iter().map(|&v| v as f64 * rn).collect();
                let (tlo, thi) = line_in_target(&normals, &offsets, &c, &zero_shift);
                if thi - tlo < eps * rn {
                    continue;
                }
                let open = line_gaps(lattice, &placed, &idx, &c, tlo, thi)
                    .iter()
                    .any(|g| g.1 - g.0 > 1e-9 * rn);
                if open {
                    next.insert(w);
                }
            }
        }
        cols = next;
        if cols.is_empty() {
            break;
        }
    }
    let placements = placed
        .into_iter()
        .map(|(q, r, m)| Placement {
            center: lattice.x_of_u(&q),
            scale: r,
            mirrored: m,
        })
        .collect();
    (placements, Vec::new(), covered)
}

impl CellComplex {
    fn index(&self) -> &CellIndex {
        self.index.get_or_init(|| {
            let mut idx = CellIndex::default();
            for (i, p) in self.placements.iter().enumerate() {
                let j = (self.lattice.r_max / p.scale).log2().round() as u32;
                idx.insert(&self.lattice, i, j, &self.lattice.u_of_x(&p.center));
            }
            idx
        })
    }

    pub fn cell(&self) -> &DiamondCell {
        &self.lattice.cell
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    /// Volume of one copy.
    pub fn copy_volume(&self, i: usize) -> f64 {
        self.cell().volume() * self.placements[i].scale.powi(self.cell().n as i32)
    }

    /// The copy as a polytope in global coordinates.
    pub fn copy_polytope(&self, i: usize) -> Polytope {
        let p = &self.placements[i];
        let cell = self.cell();
        let local = if p.mirrored { cell.local_mirror() } else { cell.local() };
        local
            .transform(&cell.frame.scale(p.scale), &p.center)
            .expect("similarity")
    }

    /// Local coordinates of `x` in the unit-scale frame of copy `i`.
    pub fn to_local(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let p = &self.placements[i];
        let d: Vec<f64> = x.iter().zip(&p.center).map(|(a, b)| (a - b) / p.scale).collect();
        self.cell().frame.tmul_vec(&d)
    }

    /// Signed distance from `x` to the boundary of copy `i` (positive inside).
    pub fn depth_in_copy(&self, i: usize, x: &[f64]) -> f64 {
        let p = &self.placements[i];
        p.scale * self.cell().local_depth(&self.to_local(i, x), p.mirrored)
    }

    /// The copy whose interior contains `x`; points within `1e-12` of a copy
    /// boundary, and points in no copy, are residual.
    pub fn locate(&self, x: &[f64]) -> Result<Located> {
        let scale = self
            .target
            .vertices()
            .iter()
            .flatten()
            .fold(1.0f64, |m, v| m.max(v.abs()));
        if !self.target.contains(x, 1e-12 * scale) {
            return Err(Error::OutsideDomain);
        }
        let u = self.lattice.u_of_x(x);
        for i in self.index().query(&self.lattice, &u, &u) {
            let d = self.depth_in_copy(i, x);
            if d > 1e-12 {
                return Ok(Located::Cell(i));
            }
            if d >= -1e-12 {
                return Ok(Located::Residual);
            }
        }
        Ok(Located::Residual)
    }
}
