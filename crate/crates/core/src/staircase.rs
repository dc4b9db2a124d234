//! The convex-integration staircase for Born-Infeld data and the stitched
//! construction over piecewise-constant data.
//!
//! Each refinement replaces a value `y` of the current level by atoms of the
//! next level of an [`InApproximation`]. The decomposition weights are split
//! into dyadic halves, so every refinement is a binary tree of `½`-laminates:
//! each tree node with two children is realized, inside every constancy
//! region it receives, by a honeycomb of diamond cells of weight `½`, whose
//! lower and upper halves carry the two children. Nested fills make the
//! number of cells astronomically large, so the field is kept as this tree
//! and evaluated by walks: a point is located in the coarsest lattice cell
//! inside its current region, moved into the matching simplex of that cell,
//! and followed to the next tree node. Deeper than the float resolution of
//! the starting point, positions are resampled uniformly in the current
//! region, which samples the same distribution of values.
//!
//! Exact averages and divergence-freeness hold cell by cell; they are
//! certified from the canonical cell of every block (potential continuity,
//! cellwise mean), weighted by the mass reaching the block.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domains::Lattice;
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::hulls::{AnchoredPoint, InApproximation};
use crate::laminate::split_frame;
use crate::linalg::{dot, Mat, Point10};

/// Spatial dimension of Born-Infeld fields.
const N: usize = 3;
/// Weight of every block.
const THETA: f64 = 0.5;

type V3 = [f64; 3];

/// Mollifier schedule. Values are kept as base-2 logarithms because the
/// scales of deep levels underflow `f64`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// `log2 δ_i` for `i = 1, 2, …`.
    pub log2_delta: Vec<f64>,
    /// `log2 ε_i` for `i = 1, 2, …`.
    pub log2_eps: Vec<f64>,
}

impl Schedule {
    pub fn new(delta1: f64) -> Self {
        Schedule {
            log2_delta: vec![delta1.log2()],
            log2_eps: Vec::new(),
        }
    }

    /// Appends `ε_i` and `δ_{i+1} = δ_i ε_i`.
    pub fn push(&mut self, log2_eps: f64) {
        let last = *self.log2_delta.last().expect("nonempty schedule");
        self.log2_eps.push(log2_eps);
        self.log2_delta.push(last + log2_eps);
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.log2_delta[i - 1].exp2()
    }

    pub fn eps(&self, i: usize) -> f64 {
        self.log2_eps[i - 1].exp2()
    }

    /// `ε_i < 2^{-i}`, `δ` strictly decreasing and `Σ_{i≥2} δ_i < δ_1/2`.
    pub fn check(&self) -> Result<()> {
        for (k, &le) in self.log2_eps.iter().enumerate() {
            let i = (k + 1) as f64;
            if !(le < -i) {
                return Err(Error::Schedule(format!("eps_{} = 2^{le} not below 2^-{i}", k + 1)));
            }
        }
        if self.log2_delta.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Schedule("delta not strictly decreasing".into()));
        }
        let rel: f64 = self.log2_delta[1..]
            .iter()
            .map(|l| (l - self.log2_delta[0]).exp2())
            .sum();
        if !(rel < 0.5) {
            return Err(Error::Schedule(format!("sum of later deltas is {rel} of delta_1")));
        }
        Ok(())
    }
}

/// A convex region in local coordinates: `a_f·x ≤ b_f` with unit normals.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Region {
    verts: Vec<V3>,
    normals: Vec<V3>,
    offsets: Vec<f64>,
    inradius: f64,
    volume: f64,
}

fn v3(v: &[f64]) -> V3 {
    [v[0], v[1], v[2]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn mat_vec(t: &[[f64; 3]; 3], v: V3) -> V3 {
    std::array::from_fn(|i| t[i][0] * v[0] + t[i][1] * v[1] + t[i][2] * v[2])
}

fn mat_tvec(t: &[[f64; 3]; 3], v: V3) -> V3 {
    std::array::from_fn(|j| t[0][j] * v[0] + t[1][j] * v[1] + t[2][j] * v[2])
}

impl Region {
    fn from_polytope(p: &Polytope) -> Self {
        let verts = p.vertices().iter().map(|v| v3(v)).collect();
        let normals = p.normals().iter().map(|a| v3(a)).collect();
        let (_, inradius) = p.chebyshev_center();
        Region {
            verts,
            normals,
            offsets: p.offsets().to_vec(),
            inradius,
            volume: p.volume(),
        }
    }

    /// Tetrahedron with the given vertices.
    fn simplex(verts: [V3; 4]) -> Self {
        let mut normals = Vec::with_capacity(4);
        let mut offsets = Vec::with_capacity(4);
        let mut area = 0.0;
        for skip in 0..4 {
            let f: Vec<V3> = (0..4).filter(|&i| i != skip).map(|i| verts[i]).collect();
            let mut nv = cross(sub(f[1], f[0]), sub(f[2], f[0]));
            let len = dot(&nv, &nv).sqrt();
            area += 0.5 * len;
            nv.iter_mut().for_each(|x| *x /= len);
            let mut b = dot(&nv, &f[0]);
            if dot(&nv, &verts[skip]) > b {
                nv.iter_mut().for_each(|x| *x = -*x);
                b = -b;
            }
            normals.push(nv);
            offsets.push(b);
        }
        let e1 = sub(verts[1], verts[0]);
        let e2 = sub(verts[2], verts[0]);
        let e3 = sub(verts[3], verts[0]);
        let volume = dot(&e1, &cross(e2, e3)).abs() / 6.0;
        Region {
            verts: verts.to_vec(),
            normals,
            offsets,
            inradius: 3.0 * volume / area,
            volume,
        }
    }

    fn depth(&self, x: V3) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| b - dot(a, &x))
            .fold(f64::INFINITY, f64::min)
    }

    fn contains(&self, x: V3) -> bool {
        self.depth(x) >= 0.0
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> V3 {
        if self.verts.len() == 4 && self.normals.len() == 4 {
            let e: [f64; 4] = std::array::from_fn(|_| -(1.0 - rng.gen::<f64>()).ln());
            let s: f64 = e.iter().sum();
            let mut x = [0.0; 3];
            for (w, v) in e.iter().zip(&self.verts) {
                for i in 0..3 {
                    x[i] += w / s * v[i];
                }
            }
            return x;
        }
        // Rejection from the bounding box.
        let lo: V3 = std::array::from_fn(|i| self.verts.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min));
        let hi: V3 = std::array::from_fn(|i| self.verts.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max));
        loop {
            let x: V3 = std::array::from_fn(|i| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>());
            if self.contains(x) {
                return x;
            }
        }
    }
}

/// Geometry of one `½`-block between `A` (lower halves) and `B` (upper
/// halves) in the canonical cell of unit scale.
#[derive(Clone, Debug)]
pub(crate) struct BlockGeom {
    /// Rows of the rotation `T` with `(A−B)_{DB} T e_3 = 0`.
    t: [[f64; 3]; 3],
    eps: f64,
    /// Value minus the phase state on each of the eight simplices, in the
    /// `(D, B)` block; lower simplices first.
    shifts: [[f64; 6]; 8],
    /// Cell-local apex of each simplex and the simplex as a region in units
    /// of the cell scale, rotated to the ambient frame.
    apex: [V3; 8],
    pieces: Vec<Region>,
    /// `sup |G|` on the unit cell.
    g_sup: f64,
    /// Continuity defect of the potential times facet area per cell volume.
    kappa: f64,
    /// `|cell mean − ½(A+B)|` on the unit cell.
    mean_defect: f64,
}

fn db(p: &Point10) -> [f64; 6] {
    [p.d[0], p.d[1], p.d[2], p.b[0], p.b[1], p.b[2]]
}

/// Cell-local vertices of simplex `idx` (`idx < 4` lower): apex, waist
/// center, then the two waist tips selected by the sign mask.
fn piece_vertices(idx: usize, eps: f64) -> [V3; 4] {
    let lower = idx < 4;
    let mask = idx % 4;
    let s0 = if mask & 1 == 1 { -1.0 } else { 1.0 };
    let s1 = if mask & 2 == 2 { -1.0 } else { 1.0 };
    let w = eps * THETA;
    [
        [0.0, 0.0, if lower { 0.0 } else { eps }],
        [0.0, 0.0, w],
        [s0, 0.0, w],
        [0.0, s1, w],
    ]
}

impl BlockGeom {
    /// Builds the block with aspect chosen so that every simplex value is
    /// within `tol` of its phase state.
    pub(crate) fn new(a: &Point10, b: &Point10, tol: f64) -> Result<Self> {
        let c = a.db_rows().sub(&b.db_rows());
        let scale = 1.0 + a.norm().max(b.norm());
        let flat_split = c.norm() <= 1e-14 * scale;
        let frame = if flat_split {
            Mat::identity(N)
        } else {
            split_frame(&a.db_rows(), &b.db_rows())?
        };
        let t: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| frame.get(i, j)));
        let tn: V3 = std::array::from_fn(|i| t[i][2]);
        let d: [V3; 2] = [v3(c.row(0)), v3(c.row(1))];
        // Values at unit aspect give the perturbation per unit ε.
        let lg = |eps: f64, idx: usize| -> [f64; 6] {
            let lower = idx < 4;
            let mask = idx % 4;
            let cc = eps * THETA * (1.0 - THETA);
            let s = [
                if mask & 1 == 1 { -1.0 } else { 1.0 },
                if mask & 2 == 2 { -1.0 } else { 1.0 },
            ];
            let psi1 = [-cc * s[0], -cc * s[1], if lower { 1.0 - THETA } else { -THETA }];
            let g = mat_vec(&t, psi1);
            let gt = dot(&g, &tn);
            let mut out = [0.0; 6];
            for k in 0..2 {
                let gd = dot(&g, &d[k]);
                for j in 0..3 {
                    out[3 * k + j] = gt * d[k][j] - gd * tn[j];
                }
            }
            out
        };
        let phase_shift = |eps: f64, idx: usize| -> [f64; 6] {
            let l = lg(eps, idx);
            let (ad, bd) = (db(a), db(b));
            let lower = idx < 4;
            std::array::from_fn(|k| {
                let avg = THETA * ad[k] + (1.0 - THETA) * bd[k];
                avg + l[k] - if lower { ad[k] } else { bd[k] }
            })
        };
        let pert1 = (0..8)
            .map(|i| crate::linalg::norm(&phase_shift(1.0, i)))
            .fold(0.0, f64::max);
        let eps = if flat_split || pert1 == 0.0 {
            1.0
        } else {
            (0.99 * tol / pert1).min(1.0)
        };
        let shifts: [[f64; 6]; 8] = std::array::from_fn(|i| phase_shift(eps, i));

        let mut apex = [[0.0; 3]; 8];
        let mut pieces = Vec::with_capacity(8);
        let mut area = 0.0;
        for idx in 0..8 {
            let pv = piece_vertices(idx, eps);
            apex[idx] = pv[0];
            let rv: [V3; 4] = std::array::from_fn(|k| mat_vec(&t, sub(pv[k], pv[0])));
            let reg = Region::simplex(rv);
            area += 3.0 * reg.volume / reg.inradius;
            pieces.push(reg);
        }
        // Potential ψ·S′ with ψ affine per simplex: zero on the cell
        // boundary, εθ(1−θ) at the waist center.
        let s_norm = {
            let mut s2 = 0.0;
            for dk in &d {
                for i in 0..3 {
                    for j in 0..3 {
                        s2 += (tn[i] * dk[j] - dk[i] * tn[j]).powi(2);
                    }
                }
            }
            s2.sqrt()
        };
        let cc = eps * THETA * (1.0 - THETA);
        let mut defect: f64 = 0.0;
        for idx in 0..8 {
            let lower = idx < 4;
            let pv = piece_vertices(idx, eps);
            let s = [pv[2][0], pv[3][1]];
            let psi0 = if lower { 0.0 } else { THETA * eps };
            let psi1 = [-cc * s[0], -cc * s[1], if lower { 1.0 - THETA } else { -THETA }];
            let exact = [0.0, cc, 0.0, 0.0];
            for (k, v) in pv.iter().enumerate() {
                let val = psi0 + dot(&psi1, v);
                defect = defect.max((val - exact[k]).abs());
            }
        }
        let cell_vol: f64 = pieces.iter().map(|p| p.volume).sum();
        let kappa = defect * s_norm * area / cell_vol;
        let mut mean = [0.0; 6];
        for (idx, p) in pieces.iter().enumerate() {
            let base = if idx < 4 { db(a) } else { db(b) };
            for k in 0..6 {
                mean[k] += p.volume * (base[k] + shifts[idx][k]);
            }
        }
        let target: [f64; 6] = std::array::from_fn(|k| THETA * db(a)[k] + (1.0 - THETA) * db(b)[k]);
        let mean_defect = crate::linalg::norm(&(0..6).map(|k| mean[k] / cell_vol - target[k]).collect::<Vec<_>>());
        let vol_lower: f64 = pieces[..4].iter().map(|p| p.volume).sum();
        let ph_defect = (vol_lower / cell_vol - THETA).abs() * a.dist(b);
        Ok(BlockGeom {
            t,
            eps,
            shifts,
            apex,
            pieces,
            g_sup: cc * s_norm,
            kappa,
            mean_defect: mean_defect + ph_defect,
        })
    }

    /// Lattice cell vertices in cell-local coordinates.
    fn cell_vertices(&self) -> [V3; 6] {
        let e = self.eps;
        [
            [0.0, 0.0, 0.0],
            [0.0, 0.0, e],
            [1.0, 0.0, e / 2.0],
            [-1.0, 0.0, e / 2.0],
            [0.0, 1.0, e / 2.0],
            [0.0, -1.0, e / 2.0],
        ]
    }
}

/// A located cell: simplex index, cell-local position and scale.
#[derive(Clone, Copy, Debug)]
struct Hit {
    piece: usize,
    y: V3,
    r: f64,
    site: [i64; 3],
    level: u32,
}

/// Coarsest lattice cell containing `x + off` that lies inside `region`,
/// over `levels + 1` dyadic scales starting at `r0`.
fn locate(region: &Region, g: &BlockGeom, r0: f64, levels: u32, x: V3, off: V3) -> Option<Hit> {
    let o = region.verts[0];
    let xo = [x[0] + off[0], x[1] + off[1], x[2] + off[2]];
    let u = {
        let base = mat_tvec(&g.t, sub(x, o));
        let d = mat_tvec(&g.t, off);
        [base[0] + d[0], base[1] + d[1], base[2] + d[2]]
    };
    let slack: Vec<f64> = region
        .normals
        .iter()
        .zip(&region.offsets)
        .map(|(a, b)| b - dot(a, &xo))
        .collect();
    if slack.iter().any(|&s| s < 0.0) {
        return None;
    }
    let anormals: Vec<V3> = region.normals.iter().map(|a| mat_tvec(&g.t, *a)).collect();
    let cv = g.cell_vertices();
    for k in 0..=levels {
        let r = r0 * 0.5f64.powi(k as i32);
        let tt = [u[0] / r, u[1] / r, 2.0 * u[2] / (g.eps * r)];
        let z = Lattice::nearest_site(&tt);
        let p = [r * z[0] as f64, r * z[1] as f64, g.eps * r * (z[2] - 1) as f64 / 2.0];
        let y = [(u[0] - p[0]) / r, (u[1] - p[1]) / r, (u[2] - p[2]) / r];
        if y[0].abs() + y[1].abs() + (2.0 * y[2] / g.eps - 1.0).abs() >= 1.0 {
            continue;
        }
        let tol = 1e-12 * r;
        let inside = cv.iter().all(|v| {
            let du = [r * (v[0] - y[0]), r * (v[1] - y[1]), r * (v[2] - y[2])];
            anormals.iter().zip(&slack).all(|(a, s)| dot(a, &du) <= s + tol)
        });
        if inside {
            let lower = y[2] < g.eps * THETA;
            let mask = (y[0] < 0.0) as usize | ((y[1] < 0.0) as usize) << 1;
            return Some(Hit {
                piece: if lower { mask } else { 4 + mask },
                y,
                r,
                site: [z[0], z[1], z[2]],
                level: k,
            });
        }
    }
    None
}

/// Node of a refinement tree. Node 0 is the root.
#[derive(Clone, Debug)]
enum TreeNode {
    /// The whole dyadic interval lies in one atom: a node of the next level.
    Leaf { child: usize },
    /// Interval still split at the depth limit; its value stays.
    Unresolved { value: Point10 },
    /// `½`-block with the lower child on the lower cell halves.
    Block {
        value: Point10,
        lower: usize,
        upper: usize,
        geom: usize,
        depth: usize,
    },
}

#[derive(Clone, Debug)]
struct Tree {
    nodes: Vec<TreeNode>,
}

/// Accumulated structural certificates, weighted by the mass reaching each
/// tree node.
#[derive(Clone, Copy, Debug, Default)]
struct Certs {
    /// Bound on `|average(V) − average(F)|` per unit volume.
    mean: f64,
    /// Bound on `|∫V·∇φ|` per unit volume and unit `‖∇φ‖_∞`.
    div: f64,
    /// Mass left unresolved at the depth limit.
    unresolved: f64,
    blocks: usize,
}

struct TreeBuilder<'a> {
    atoms: &'a [(usize, f64, Point10)],
    cum: Vec<f64>,
    depth_max: usize,
    tol: f64,
    nodes: Vec<TreeNode>,
    geoms: &'a mut Vec<BlockGeom>,
    mass: f64,
    certs: &'a mut Certs,
}

impl TreeBuilder<'_> {
    fn build(&mut self, lo: f64, len: f64, depth: usize) -> Result<usize> {
        let hi = lo + len;
        let mut acc = [0.0; 10];
        let mut best = (0usize, -1.0f64);
        for (k, (_, w, p)) in self.atoms.iter().enumerate() {
            let ov = (hi.min(self.cum[k] + w) - lo.max(self.cum[k])).max(0.0);
            if ov > 0.0 {
                for (s, v) in acc.iter_mut().zip(p.to_array()) {
                    *s += ov * v;
                }
            }
            if ov > best.1 {
                best = (k, ov);
            }
        }
        let value = Point10::from_array(acc.map(|s| s / len));
        let id = self.nodes.len();
        if best.1 >= len * (1.0 - 1e-12) {
            let atom = &self.atoms[best.0];
            self.certs.mean += self.mass * len * value.dist(&atom.2);
            self.nodes.push(TreeNode::Leaf { child: atom.0 });
            return Ok(id);
        }
        if depth >= self.depth_max {
            self.certs.unresolved += self.mass * len;
            self.nodes.push(TreeNode::Unresolved { value });
            return Ok(id);
        }
        self.nodes.push(TreeNode::Leaf { child: usize::MAX });
        let lower = self.build(lo, len / 2.0, depth + 1)?;
        let upper = self.build(lo + len / 2.0, len / 2.0, depth + 1)?;
        let a = node_value(&self.nodes, lower, self.atoms);
        let b = node_value(&self.nodes, upper, self.atoms);
        let g = BlockGeom::new(&a, &b, self.tol)?;
        self.certs.mean += self.mass * len * g.mean_defect;
        self.certs.div += self.mass * len * g.kappa;
        self.certs.blocks += 1;
        self.geoms.push(g);
        self.nodes[id] = TreeNode::Block {
            value,
            lower,
            upper,
            geom: self.geoms.len() - 1,
            depth,
        };
        Ok(id)
    }
}

fn node_value(nodes: &[TreeNode], id: usize, atoms: &[(usize, f64, Point10)]) -> Point10 {
    match &nodes[id] {
        TreeNode::Leaf { child } => atoms.iter().find(|a| a.0 == *child).map(|a| a.2).expect("leaf atom"),
        TreeNode::Unresolved { value } | TreeNode::Block { value, .. } => *value,
    }
}

/// Run parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseConfig {
    pub i_max: usize,
    pub tau_total: f64,
    /// `δ_1`, the potential budget of the first refinement.
    pub delta1: f64,
    /// Walks for the final statistics.
    pub samples: usize,
    /// Point pairs per mollification-gap estimate.
    pub gap_samples: usize,
    /// Depth limit of the dyadic weight trees.
    pub depth_max: usize,
    /// Dyadic cell scales tried per region.
    pub cell_levels: u32,
    pub seed: u64,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        StaircaseConfig {
            i_max: 3,
            tau_total: 0.15,
            delta1: 1.0,
            samples: 20_000,
            gap_samples: 4_000,
            depth_max: 12,
            cell_levels: 16,
            seed: 0,
        }
    }
}

/// A constancy region of `F`.
#[derive(Clone, Debug)]
struct RootRegion {
    region: Region,
    value: Point10,
    node: usize,
}

/// The staircase field: `V_i = F + L(H_i)` for every computed level.
#[derive(Clone, Debug)]
pub struct Staircase {
    ia: Arc<InApproximation>,
    cfg: StaircaseConfig,
    roots: Vec<RootRegion>,
    domain: (V3, V3),
    /// Value nodes per level, starting at level 1.
    nodes: Vec<Vec<AnchoredPoint>>,
    mass: Vec<Vec<f64>>,
    /// `trees[i-1][k]` refines node `k` of level `i`.
    trees: Vec<Vec<Tree>>,
    geoms: Vec<BlockGeom>,
    pub schedule: Schedule,
    certs: Certs,
    tol_block: f64,
}

impl Staircase {
    /// Sets up level 1 over the given constancy regions. Region values must be
    /// points of the compact set the in-approximation was built from.
    pub fn new(pieces: &[(Polytope, Point10)], ia: Arc<InApproximation>, cfg: StaircaseConfig) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidParameter("no pieces".into()));
        }
        if cfg.i_max == 0 || cfg.i_max > ia.i_max() {
            return Err(Error::InvalidParameter(format!(
                "i_max = {} needs 1 ≤ i_max ≤ {} in-approximation levels",
                cfg.i_max,
                ia.i_max()
            )));
        }
        let mut roots = Vec::with_capacity(pieces.len());
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut level1: Vec<AnchoredPoint> = Vec::new();
        let mut mass1: Vec<f64> = Vec::new();
        for (k, (poly, value)) in pieces.iter().enumerate() {
            if poly.dim() != N {
                return Err(Error::Dimension(format!("piece {k} has dimension {}", poly.dim())));
            }
            let r = ia
                .roots
                .iter()
                .position(|rc| rc.center.dist(value) <= 1e-12 * (1.0 + value.norm()))
                .ok_or_else(|| Error::Membership(format!("piece {k}: value is not a root of the in-approximation")))?;
            let (plo, phi) = poly.bbox();
            for i in 0..3 {
                lo[i] = lo[i].min(plo[i]);
                hi[i] = hi[i].max(phi[i]);
            }
            let node = match level1.iter().position(|a| a.value == ia.roots[r].center) {
                Some(n) => n,
                None => {
                    level1.push(AnchoredPoint {
                        value: ia.roots[r].center,
                        weights: vec![(r, 1.0)],
                    });
                    mass1.push(0.0);
                    level1.len() - 1
                }
            };
            let region = Region::from_polytope(poly);
            mass1[node] += region.volume;
            roots.push(RootRegion {
                region,
                value: *value,
                node,
            });
        }
        // Shift budget: final values must keep the nesting margin and the
        // distance radius of every level.
        let mut s_max = f64::INFINITY;
        for i in 2..=cfg.i_max {
            let lv = ia.level(i);
            s_max = s_max.min(lv.nesting_margin_lb).min(1.0 / i as f64 - lv.dist_ub);
        }
        let refinements = cfg.i_max.saturating_sub(1).max(1);
        let tol_block = 0.5 * s_max / (refinements * cfg.depth_max.max(1)) as f64;
        if !(tol_block > 0.0) {
            return Err(Error::Certificate(format!("no shift budget left (s_max = {s_max})")));
        }
        Ok(Staircase {
            schedule: Schedule::new(cfg.delta1),
            ia,
            cfg,
            roots,
            domain: (lo, hi),
            nodes: vec![level1],
            mass: vec![mass1],
            trees: Vec::new(),
            geoms: Vec::new(),
            certs: Certs::default(),
            tol_block,
        })
    }

    /// Number of levels built so far.
    pub fn levels(&self) -> usize {
        self.nodes.len()
    }

    /// Atoms (next-level index, weight, value) of node `k` at level `i`.
    fn children(&self, i: usize, k: usize) -> Vec<(AnchoredPoint, f64)> {
        let y = &self.nodes[i - 1][k];
        let shrink = self.ia.level(i).shrink;
        let mut out = Vec::new();
        let mut push = |x: &AnchoredPoint, w_x: f64| {
            for &(p, w) in &x.weights {
                let e = self.ia.anchors[p].to_array();
                let xv = x.value.to_array();
                let value = Point10::from_array(std::array::from_fn(|t| shrink * xv[t] + (1.0 - shrink) * e[t]));
                let mut weights: Vec<(usize, f64)> = x.weights.iter().map(|&(q, v)| (q, shrink * v)).collect();
                match weights.iter_mut().find(|(q, _)| *q == p) {
                    Some(slot) => slot.1 += 1.0 - shrink,
                    None => weights.push((p, 1.0 - shrink)),
                }
                out.push((AnchoredPoint { value, weights }, w_x * w));
            }
        };
        if i == 1 {
            let rc = &self.ia.roots[y.weights[0].0];
            for corner in &rc.kuhn {
                push(corner, 0.5);
            }
        } else {
            push(y, 1.0);
        }
        out
    }

    /// Builds the trees refining level `i` into level `i + 1`.
    pub fn refine_once(&mut self) -> Result<()> {
        let i = self.nodes.len();
        if i >= self.cfg.i_max {
            return Err(Error::InvalidParameter(format!("level {i} is already the last")));
        }
        let mut next: Vec<AnchoredPoint> = Vec::new();
        let mut next_mass: Vec<f64> = Vec::new();
        let mut trees = Vec::with_capacity(self.nodes[i - 1].len());
        for k in 0..self.nodes[i - 1].len() {
            let mut atoms: Vec<(usize, f64, Point10)> = Vec::new();
            let mut kids = self.children(i, k);
            kids.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (ap, w) in kids {
                if w <= 0.0 {
                    continue;
                }
                atoms.push((next.len(), w, ap.value));
                next.push(ap);
                next_mass.push(0.0);
            }
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            atoms.iter_mut().for_each(|a| a.1 /= total);
            let mut cum = Vec::with_capacity(atoms.len());
            let mut c = 0.0;
            for a in &atoms {
                cum.push(c);
                c += a.1;
            }
            let mass = self.mass[i - 1][k];
            let mut b = TreeBuilder {
                atoms: &atoms,
                cum,
                depth_max: self.cfg.depth_max,
                tol: self.tol_block,
                nodes: Vec::new(),
                geoms: &mut self.geoms,
                mass,
                certs: &mut self.certs,
            };
            b.build(0.0, 1.0, 0)
                .map_err(|e| Error::Certificate(format!("level {i}, node {k}: {e}")))?;
            let tree = Tree { nodes: b.nodes };
            // Mass reaching each child through leaves.
            let mut stack = vec![(0usize, 1.0f64)];
            while let Some((id, len)) = stack.pop() {
                match &tree.nodes[id] {
                    TreeNode::Leaf { child } => next_mass[*child] += mass * len,
                    TreeNode::Unresolved { .. } => {}
                    TreeNode::Block { lower, upper, .. } => {
                        stack.push((*lower, len / 2.0));
                        stack.push((*upper, len / 2.0));
                    }
                }
            }
            trees.push(tree);
        }
        self.nodes.push(next);
        self.mass.push(next_mass);
        self.trees.push(trees);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum RegionRef {
    Root(usize),
    Piece(usize, usize),
}

/// Position of a walk: region, its scale, local position and the tree node
/// being resolved.
#[derive(Clone, Copy, Debug)]
struct WalkState {
    region: RegionRef,
    log_scale: f64,
    x: V3,
    /// Position error in local units.
    prec: f64,
    shift: [f64; 6],
    level: usize,
    node: usize,
    tnode: usize,
}

/// Values `V_1, …, V_k` seen by one point, and whether each refinement
/// reached a node of the next level.
#[derive(Clone, Debug)]
struct Trace {
    values: Vec<Point10>,
    covered: Vec<bool>,
    /// `|accumulated shift|` at the last value.
    shift: f64,
}

/// Resampling threshold for positions deeper than the float resolution.
const PREC_LIMIT: f64 = 1e-6;

enum Next {
    Done,
    Block {
        geom: usize,
        depth: usize,
        lower: usize,
        upper: usize,
        value: Point10,
    },
}

fn shifted(p: &Point10, s: &[f64; 6]) -> Point10 {
    Point10::new(
        [p.d[0] + s[0], p.d[1] + s[1], p.d[2] + s[2]],
        [p.b[0] + s[3], p.b[1] + s[4], p.b[2] + s[5]],
        p.p,
        p.h,
    )
}

impl Staircase {
    fn region(&self, r: RegionRef) -> &Region {
        match r {
            RegionRef::Root(k) => &self.roots[k].region,
            RegionRef::Piece(g, p) => &self.geoms[g].pieces[p],
        }
    }

    fn start(&self, x: V3) -> Option<(WalkState, Trace)> {
        let k = self.roots.iter().position(|r| r.region.contains(x))?;
        let st = WalkState {
            region: RegionRef::Root(k),
            log_scale: 0.0,
            x,
            prec: 1e-16,
            shift: [0.0; 6],
            level: 1,
            node: self.roots[k].node,
            tnode: 0,
        };
        Some((
            st,
            Trace {
                values: vec![self.roots[k].value],
                covered: Vec::new(),
                shift: 0.0,
            },
        ))
    }

    fn finish(&self, tr: &mut Trace, value: Point10) {
        let total = self.trees.len() + 1;
        while tr.values.len() < total {
            tr.values.push(value);
            tr.covered.push(false);
        }
    }

    /// Resolves leaves and unresolved nodes until a block is met.
    fn advance(&self, st: &mut WalkState, tr: &mut Trace) -> Next {
        loop {
            if st.level > self.trees.len() {
                return Next::Done;
            }
            match &self.trees[st.level - 1][st.node].nodes[st.tnode] {
                TreeNode::Leaf { child } => {
                    tr.values.push(shifted(&self.nodes[st.level][*child].value, &st.shift));
                    tr.covered.push(true);
                    tr.shift = crate::linalg::norm(&st.shift);
                    st.level += 1;
                    st.node = *child;
                    st.tnode = 0;
                }
                TreeNode::Unresolved { value } => {
                    tr.shift = crate::linalg::norm(&st.shift);
                    self.finish(tr, shifted(value, &st.shift));
                    return Next::Done;
                }
                TreeNode::Block {
                    value,
                    lower,
                    upper,
                    geom,
                    depth,
                } => {
                    return Next::Block {
                        geom: *geom,
                        depth: *depth,
                        lower: *lower,
                        upper: *upper,
                        value: *value,
                    };
                }
            }
        }
    }

    /// Coarsest cell scale tried in the current region: a few inradii, capped
    /// so that the potential of this block stays below `δ_{i+1} 2^{-(d+1)}`.
    fn r0(&self, st: &WalkState, g: &BlockGeom, depth: usize) -> f64 {
        let mut r = 4.0 * self.region(st.region).inradius;
        if g.g_sup > 0.0 {
            let cap = self.schedule.log2_delta[st.level] - (depth + 1) as f64 - g.g_sup.log2() - st.log_scale;
            r = r.min(cap.exp2());
        }
        r
    }

    fn descend(&self, st: &WalkState, geom: usize, hit: &Hit, lower: usize, upper: usize) -> WalkState {
        let g = &self.geoms[geom];
        let mut shift = st.shift;
        for (s, d) in shift.iter_mut().zip(&g.shifts[hit.piece]) {
            *s += d;
        }
        WalkState {
            region: RegionRef::Piece(geom, hit.piece),
            log_scale: st.log_scale + hit.r.log2(),
            x: mat_vec(&g.t, sub(hit.y, g.apex[hit.piece])),
            prec: st.prec / hit.r + 1e-15,
            shift,
            level: st.level,
            node: st.node,
            tnode: if hit.piece < 4 { lower } else { upper },
        }
    }

    fn run<R: Rng>(&self, mut st: WalkState, tr: &mut Trace, rng: &mut R) {
        loop {
            let Next::Block {
                geom,
                depth,
                lower,
                upper,
                value,
            } = self.advance(&mut st, tr)
            else {
                return;
            };
            let g = &self.geoms[geom];
            let r0 = self.r0(&st, g, depth);
            match locate(self.region(st.region), g, r0, self.cfg.cell_levels, st.x, [0.0; 3]) {
                None => {
                    self.finish(tr, shifted(&value, &st.shift));
                    return;
                }
                Some(hit) => {
                    st = self.descend(&st, geom, &hit, lower, upper);
                    if st.prec > PREC_LIMIT {
                        st.x = self.region(st.region).sample(rng);
                        st.prec = 1e-16;
                    }
                }
            }
        }
    }

    /// Values of all levels at `x`, or `None` outside the domain.
    fn walk<R: Rng>(&self, x: V3, rng: &mut R) -> Option<Trace> {
        let (st, mut tr) = self.start(x)?;
        self.run(st, &mut tr, rng);
        Some(tr)
    }

    /// Values of all levels at `x` and `x + d`, following both points jointly
    /// while they share cells.
    fn walk_pair<R: Rng>(&self, x: V3, d: V3, rng: &mut R) -> Option<(Trace, Trace)> {
        let xb = [x[0] + d[0], x[1] + d[1], x[2] + d[2]];
        let (mut st, mut ta) = self.start(x)?;
        let (stb, mut tb) = self.start(xb)?;
        if !matches!((st.region, stb.region), (RegionRef::Root(a), RegionRef::Root(b)) if a == b) {
            self.run(st, &mut ta, rng);
            self.run(stb, &mut tb, rng);
            return Some((ta, tb));
        }
        let mut d = d;
        loop {
            let mut sb = st;
            let na = self.advance(&mut st, &mut ta);
            self.advance(&mut sb, &mut tb);
            let Next::Block {
                geom,
                depth,
                lower,
                upper,
                value,
            } = na
            else {
                return Some((ta, tb));
            };
            let g = &self.geoms[geom];
            let r0 = self.r0(&st, g, depth);
            let region = self.region(st.region);
            let ha = locate(region, g, r0, self.cfg.cell_levels, st.x, [0.0; 3]);
            let hb = locate(region, g, r0, self.cfg.cell_levels, st.x, d);
            match (ha, hb) {
                (None, None) => {
                    self.finish(&mut ta, shifted(&value, &st.shift));
                    self.finish(&mut tb, shifted(&value, &st.shift));
                    return Some((ta, tb));
                }
                (Some(a), Some(b)) if a.level == b.level && a.site == b.site && a.piece == b.piece => {
                    st = self.descend(&st, geom, &a, lower, upper);
                    d = d.map(|v| v / a.r);
                    if st.prec > PREC_LIMIT {
                        let child = self.region(st.region);
                        let mut found = false;
                        for _ in 0..64 {
                            let x = child.sample(rng);
                            if child.contains([x[0] + d[0], x[1] + d[1], x[2] + d[2]]) {
                                st.x = x;
                                found = true;
                                break;
                            }
                        }
                        st.prec = 1e-16;
                        if !found {
                            let mut sb = st;
                            st.x = child.sample(rng);
                            sb.x = child.sample(rng);
                            self.run(st, &mut ta, rng);
                            self.run(sb, &mut tb, rng);
                            return Some((ta, tb));
                        }
                    }
                }
                _ => {
                    let mut sb = st;
                    sb.x = [st.x[0] + d[0], st.x[1] + d[1], st.x[2] + d[2]];
                    self.run(st, &mut ta, rng);
                    self.run(sb, &mut tb, rng);
                    return Some((ta, tb));
                }
            }
        }
    }
}

/// Seed of sample `idx` of estimate `tag`, so estimates share random numbers
/// across scales and runs.
fn sample_seed(seed: u64, tag: u64, idx: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ idx.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn diff_norm(a: &Point10, b: &Point10) -> f64 {
    a.dist(b)
}

/// One row of the level table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: usize,
    pub log2_delta: f64,
    pub delta: f64,
    /// `ε_i` chosen after this level (absent for the last level).
    pub log2_eps: Option<f64>,
    pub eps: Option<f64>,
    /// Upper confidence bound of the mollification gap at `ε_i`.
    pub gap_ucb: Option<f64>,
    /// `‖V_i − V_{i−1}‖_{L¹}` (absent at level 1).
    pub l1_increment: Option<f64>,
    /// Fraction of points whose value at this level is a node of the level.
    pub covered_fraction: f64,
    /// Fraction with `dist(V_i, E) ≤ 1/i` (absent at level 1).
    pub dist_fraction: Option<f64>,
    pub max_defect: f64,
    pub mean_defect: f64,
    pub nodes: usize,
}

/// Outcome of a staircase run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseReport {
    pub i_max: usize,
    pub tau_total: f64,
    pub seed: u64,
    pub samples: usize,
    pub volume: f64,
    pub levels: Vec<LevelRow>,
    pub schedule: Schedule,
    pub blocks: usize,
    /// Fraction of `Ω` whose final value lies in `U_{i_max}` (margin and distance).
    pub final_in_u_fraction: f64,
    pub final_dist_fraction: f64,
    /// Defect `d_P + d_h` of final values, over points in `U_{i_max}`.
    pub final_max_defect: f64,
    pub final_mean_defect: f64,
    /// Sampled mean of `V` minus the mean of `F`.
    pub average_sampled_error: f64,
    /// Certified bound on `|average(V) − average(F)|`.
    pub average_bound: f64,
    /// Certified bound on `|∫V·∇φ| / (‖∇φ‖_∞ vol Ω)`.
    pub weak_div_bound: f64,
    /// Bound on `‖H‖_∞`.
    pub potential_bound: f64,
    /// Largest shift of a final value from its level point.
    pub max_shift: f64,
    pub unresolved_mass: f64,
    pub schedule_ok: bool,
    /// `true` when the final fraction in `U_{i_max}` is at least `1 − τ_total`.
    pub passed: bool,
}

impl Staircase {
    pub fn volume(&self) -> f64 {
        self.roots.iter().map(|r| r.region.volume).sum()
    }

    fn sample_domain<R: Rng>(&self, rng: &mut R, lo: V3, hi: V3) -> Option<V3> {
        for _ in 0..1000 {
            let x: V3 = std::array::from_fn(|i| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>());
            if self.roots.iter().any(|r| r.region.contains(x)) {
                return Some(x);
            }
        }
        None
    }

    fn background(&self, x: V3) -> Point10 {
        self.roots
            .iter()
            .find(|r| r.region.contains(x))
            .map(|r| r.value)
            .unwrap_or_default()
    }

    /// Upper confidence bound of `‖ϱ_ε ∗ L(H_i) − L(H_i)‖_{L¹(Ω_i)}` with the
    /// tensor tent kernel, from pairs `(x, x + d)`, `d ~ ϱ_ε`.
    pub fn gap_ucb(&self, i: usize, log2_eps: f64) -> f64 {
        let (lo, hi) = self.domain;
        let m = (-(i as f64)).exp2();
        let lo_i: V3 = lo.map(|v| v + m);
        let hi_i: V3 = std::array::from_fn(|k| hi[k] - m);
        if (0..3).any(|k| lo_i[k] >= hi_i[k]) {
            return 0.0;
        }
        let eps = log2_eps.exp2();
        let n = self.cfg.gap_samples.max(2);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut hits = 0usize;
        for s in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.cfg.seed, 0x6a70 + i as u64, s as u64));
            let x: V3 = std::array::from_fn(|k| lo_i[k] + (hi_i[k] - lo_i[k]) * rng.gen::<f64>());
            let d: V3 = std::array::from_fn(|_| eps * (rng.gen::<f64>() - rng.gen::<f64>()));
            let xb = [x[0] + d[0], x[1] + d[1], x[2] + d[2]];
            let v = match self.walk_pair(x, d, &mut rng) {
                Some((ta, tb)) => {
                    hits += 1;
                    let fa = self.background(x).to_array();
                    let fb = self.background(xb).to_array();
                    let a = ta.values[i - 1].to_array();
                    let b = tb.values[i - 1].to_array();
                    crate::linalg::norm(&(0..10).map(|k| (a[k] - fa[k]) - (b[k] - fb[k])).collect::<Vec<_>>())
                }
                None => 0.0,
            };
            sum += v;
            sum2 += v * v;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = (sum2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
        let frac = hits as f64 / nf;
        let vol: f64 = (0..3).map(|k| hi_i[k] - lo_i[k]).product::<f64>() * frac.max(0.0);
        vol * (mean + 3.0 * var.sqrt() / nf.sqrt())
    }

    /// Largest dyadic `ε ≤ 2^{-i-1}` whose gap bound is below `2^{-i}`,
    /// assuming the bound grows with `ε`.
    pub fn choose_epsilon(&self, i: usize) -> Result<(f64, f64)> {
        let target = (-(i as f64)).exp2();
        let first = -((i + 1) as f64);
        let g = self.gap_ucb(i, first);
        if g < target {
            return Ok((first, g));
        }
        const FLOOR: f64 = 1000.0;
        let mut bad = first;
        let mut step = 1.0;
        let (mut good, mut g_good) = loop {
            let k = bad - step;
            if -k > FLOOR {
                return Err(Error::Schedule(format!(
                    "level {i}: mollification gap above 2^-{i} down to eps = 2^{k}"
                )));
            }
            let g = self.gap_ucb(i, k);
            if g < target {
                break (k, g);
            }
            bad = k;
            step *= 2.0;
        };
        while good + 1.0 < bad {
            let mid = ((good + bad) / 2.0).floor();
            let g = self.gap_ucb(i, mid);
            if g < target {
                good = mid;
                g_good = g;
            } else {
                bad = mid;
            }
        }
        Ok((good, g_good))
    }

    /// Walk statistics and certificates for all computed levels.
    pub fn report(&self, gaps: &[f64]) -> StaircaseReport {
        let levels = self.nodes.len();
        let n = self.cfg.samples.max(1);
        let vol = self.volume();
        let (lo, hi) = self.domain;
        let mut incr = vec![0.0; levels];
        let mut covered = vec![0usize; levels];
        let mut near = vec![0usize; levels];
        let mut max_def = vec![0.0f64; levels];
        let mut sum_def = vec![0.0; levels];
        let (mut in_u, mut dist_ok, mut fmax, mut fsum) = (0usize, 0usize, 0.0f64, 0.0);
        let mut mean_diff = [0.0; 10];
        let mut max_shift: f64 = 0.0;
        let last = levels;
        let lv_last = self.ia.level(last);
        for s in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.cfg.seed, 0x7265, s as u64));
            let Some(x) = self.sample_domain(&mut rng, lo, hi) else {
                continue;
            };
            let Some(tr) = self.walk(x, &mut rng) else { continue };
            let f = self.background(x).to_array();
            let fin = tr.values[last - 1].to_array();
            for k in 0..10 {
                mean_diff[k] += fin[k] - f[k];
            }
            let mut all_cov = true;
            for i in 0..levels {
                let v = &tr.values[i];
                if i > 0 {
                    incr[i] += diff_norm(v, &tr.values[i - 1]);
                    all_cov &= tr.covered[i - 1];
                    if all_cov {
                        covered[i] += 1;
                    }
                    if self.ia.dist_to_anchors(v) <= 1.0 / (i + 1) as f64 {
                        near[i] += 1;
                    }
                } else {
                    covered[0] += 1;
                }
                let (dp, dh) = crate::born_infeld::defect(v);
                max_def[i] = max_def[i].max(dp + dh);
                sum_def[i] += dp + dh;
            }
            let v = &tr.values[last - 1];
            let dist = self.ia.dist_to_anchors(v);
            let near_last = last == 1 || dist <= 1.0 / last as f64;
            if near_last {
                dist_ok += 1;
            }
            if all_cov {
                max_shift = max_shift.max(tr.shift);
            }
            if all_cov && near_last && tr.shift < lv_last.nesting_margin_lb {
                in_u += 1;
                let (dp, dh) = crate::born_infeld::defect(v);
                fmax = fmax.max(dp + dh);
                fsum += dp + dh;
            }
        }
        let nf = n as f64;
        let rows = (1..=levels)
            .map(|i| LevelRow {
                level: i,
                log2_delta: self.schedule.log2_delta[i - 1],
                delta: self.schedule.delta(i),
                log2_eps: self.schedule.log2_eps.get(i - 1).copied(),
                eps: self.schedule.log2_eps.get(i - 1).map(|l| l.exp2()),
                gap_ucb: gaps.get(i - 1).copied(),
                l1_increment: (i > 1).then(|| vol * incr[i - 1] / nf),
                covered_fraction: covered[i - 1] as f64 / nf,
                dist_fraction: (i > 1).then(|| near[i - 1] as f64 / nf),
                max_defect: max_def[i - 1],
                mean_defect: sum_def[i - 1] / nf,
                nodes: self.nodes[i - 1].len(),
            })
            .collect();
        let potential_bound = self.schedule.log2_delta[1..].iter().map(|l| l.exp2()).sum::<f64>();
        let schedule_ok = self.schedule.check().is_ok();
        let in_u_fraction = in_u as f64 / nf;
        StaircaseReport {
            i_max: self.cfg.i_max,
            tau_total: self.cfg.tau_total,
            seed: self.cfg.seed,
            samples: n,
            volume: vol,
            levels: rows,
            schedule: self.schedule.clone(),
            blocks: self.certs.blocks,
            final_in_u_fraction: in_u_fraction,
            final_dist_fraction: dist_ok as f64 / nf,
            final_max_defect: fmax,
            final_mean_defect: if in_u > 0 { fsum / in_u as f64 } else { 0.0 },
            average_sampled_error: crate::linalg::norm(&mean_diff.map(|v| v / nf)),
            average_bound: (self.certs.mean + self.ia.decomposition_error * vol) / vol,
            weak_div_bound: self.certs.div / vol,
            potential_bound,
            max_shift,
            unresolved_mass: self.certs.unresolved / vol,
            schedule_ok,
            passed: schedule_ok && in_u_fraction >= 1.0 - self.cfg.tau_total,
        }
    }
}

/// Runs the staircase over the constancy regions of `F`: choose `ε_i`,
/// refine, repeat up to `i_max`, then collect the report.
pub fn run_staircase(
    pieces: &[(Polytope, Point10)],
    ia: Arc<InApproximation>,
    cfg: StaircaseConfig,
) -> Result<(Staircase, StaircaseReport)> {
    let mut st = Staircase::new(pieces, ia, cfg)?;
    let mut gaps = Vec::new();
    while st.levels() < st.cfg.i_max {
        let i = st.levels();
        let (log2_eps, gap) = st.choose_epsilon(i)?;
        log::info!("level {i}: eps = 2^{log2_eps}, gap bound {gap:.3e}");
        st.schedule.push(log2_eps);
        gaps.push(gap);
        st.refine_once()?;
        log::info!(
            "level {}: {} nodes, {} blocks",
            i + 1,
            st.nodes[i].len(),
            st.certs.blocks
        );
    }
    st.schedule.check()?;
    let report = st.report(&gaps);
    Ok((st, report))
}

impl Staircase {
    /// Final value at `x`, or `None` outside the domain. `idx` seeds the
    /// resampling below float resolution.
    pub fn value_at(&self, x: [f64; 3], idx: u64) -> Option<Point10> {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.cfg.seed, 0x6576, idx));
        self.walk(x, &mut rng)
            .map(|tr| *tr.values.last().expect("level 1 value"))
    }

    pub fn in_approximation(&self) -> &InApproximation {
        &self.ia
    }

    /// Final values at `n` seeded uniform points of the domain.
    pub fn sample_final(&self, n: usize, tag: u64) -> Vec<([f64; 3], Point10)> {
        let (lo, hi) = self.domain;
        let mut out = Vec::with_capacity(n);
        for s in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.cfg.seed, tag, s as u64));
            let Some(x) = self.sample_domain(&mut rng, lo, hi) else {
                continue;
            };
            if let Some(tr) = self.walk(x, &mut rng) {
                out.push((x, *tr.values.last().expect("level 1 value")));
            }
        }
        out
    }
}

/// A Lipschitz test function on a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    Constant(f64),
    Coordinate(usize),
    Product(usize, usize),
    /// `max_k (a_k·x + b_k)`.
    MaxAffine(Vec<([f64; 3], f64)>),
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::Constant(c) => format!("const({c})"),
            TestFunction::Coordinate(i) => format!("x{i}"),
            TestFunction::Product(i, j) => format!("x{i}*x{j}"),
            TestFunction::MaxAffine(p) => format!("max-affine({})", p.len()),
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Coordinate(i) => x[*i],
            TestFunction::Product(i, j) => x[*i] * x[*j],
            TestFunction::MaxAffine(p) => p.iter().map(|(a, b)| dot(a, &x) + b).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Lipschitz constant on the box `[lo, hi]`.
    pub fn lipschitz(&self, lo: [f64; 3], hi: [f64; 3]) -> f64 {
        let amax = |i: usize| lo[i].abs().max(hi[i].abs());
        match self {
            TestFunction::Constant(_) => 0.0,
            TestFunction::Coordinate(_) => 1.0,
            TestFunction::Product(i, j) if i == j => 2.0 * amax(*i),
            TestFunction::Product(i, j) => (amax(*i).powi(2) + amax(*j).powi(2)).sqrt(),
            TestFunction::MaxAffine(p) => p.iter().map(|(a, _)| dot(a, a).sqrt()).fold(0.0, f64::max),
        }
    }

    /// Bound on `sup |φ|` over the box `[lo, hi]`.
    pub fn sup_bound(&self, lo: [f64; 3], hi: [f64; 3]) -> f64 {
        let corners: Vec<[f64; 3]> = (0..8)
            .map(|m| std::array::from_fn(|i| if m >> i & 1 == 1 { hi[i] } else { lo[i] }))
            .collect();
        match self {
            TestFunction::Constant(c) => c.abs(),
            TestFunction::Coordinate(i) => lo[*i].abs().max(hi[*i].abs()),
            TestFunction::Product(i, j) => (lo[*i].abs().max(hi[*i].abs())) * (lo[*j].abs().max(hi[*j].abs())),
            TestFunction::MaxAffine(p) => p
                .iter()
                .flat_map(|(a, b)| corners.iter().map(move |c| (dot(a, c) + b).abs()))
                .fold(0.0, f64::max),
        }
    }
}

/// Constant, the coordinates, all coordinate products and `random` seeded
/// maxima of three random affine functions.
pub fn default_test_suite(random: usize, seed: u64) -> Vec<TestFunction> {
    let mut out = vec![TestFunction::Constant(1.0)];
    out.extend((0..3).map(TestFunction::Coordinate));
    for i in 0..3 {
        for j in i..3 {
            out.push(TestFunction::Product(i, j));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random {
        let planes = (0..3)
            .map(|_| {
                let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                (a, rng.gen_range(-0.5..0.5))
            })
            .collect();
        out.push(TestFunction::MaxAffine(planes));
    }
    out
}

/// Weak* residual of one test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub name: String,
    /// Estimate of `|∫(V^j − F)φ|`.
    pub residual: f64,
    /// `2R·Lip(φ)·vol/j + 2R·‖φ‖_∞·τ_total·vol`.
    pub bound: f64,
    pub lipschitz: f64,
    pub sup: f64,
}

/// Outcome of stitching at one `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    pub j: usize,
    pub cubes: usize,
    /// Largest cube side.
    pub side: f64,
    pub radius_bound: f64,
    /// Largest sampled `|V^j − F|`, to compare with `2R`.
    pub max_deviation: f64,
    /// Weak divergence of `F` against the bubble tests.
    pub data_div_residual: f64,
    /// Certified `|∫V·∇φ| / (‖∇φ‖_∞ vol)` of the stitched field.
    pub weak_div_bound: f64,
    pub average_bound: f64,
    pub references: Vec<StaircaseReport>,
    pub rows: Vec<ResidualRow>,
    pub passed: bool,
}

/// An axis-aligned box with a constant value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPiece {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub value: Point10,
}

fn bisect_to(b: &BoxPiece, max_diam: f64, out: &mut Vec<BoxPiece>) {
    let ext: V3 = std::array::from_fn(|i| b.hi[i] - b.lo[i]);
    if dot(&ext, &ext).sqrt() <= max_diam * (1.0 + 1e-12) {
        out.push(b.clone());
        return;
    }
    let mut k = 0;
    for i in 1..3 {
        if ext[i] > ext[k] * (1.0 + 1e-12) {
            k = i;
        }
    }
    let mid = 0.5 * (b.lo[k] + b.hi[k]);
    let mut left = b.clone();
    left.hi[k] = mid;
    let mut right = b.clone();
    right.lo[k] = mid;
    bisect_to(&left, max_diam, out);
    bisect_to(&right, max_diam, out);
}

/// Weak divergence of piecewise-constant box data against bubble tests of
/// the bounding box times `1, x_0, x_1, x_2`; largest absolute entry.
pub fn box_data_div_residual(pieces: &[BoxPiece]) -> Result<f64> {
    use crate::fields::{weak_div_residuals, Partition, PiecewiseConstantField, Value};
    use crate::poly::Poly;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pieces {
        for i in 0..3 {
            lo[i] = lo[i].min(p.lo[i]);
            hi[i] = hi[i].max(p.hi[i]);
        }
    }
    let domain = Polytope::cuboid(&lo, &hi)?;
    let cells = pieces
        .iter()
        .map(|p| Polytope::cuboid(&p.lo, &p.hi))
        .collect::<Result<Vec<_>>>()?;
    let part = Arc::new(Partition::from_polytopes(domain, cells)?);
    let value = |p: &Point10| Value::with_free(p.db_rows(), vec![p.p[0], p.p[1], p.p[2], p.h]);
    let values = part.owner.iter().map(|&c| value(&pieces[c].value)).collect();
    let field = PiecewiseConstantField::new(part, values, value(&Point10::default()))?;
    let bubble = Poly::box_bubble(&lo, &hi);
    let mut worst: f64 = 0.0;
    let mut tests = vec![bubble.clone()];
    for i in 0..3 {
        tests.push(bubble.mul(&Poly::var(3, i)));
    }
    for r in weak_div_residuals(&field, &tests)?.iter().flatten() {
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// The stitched field: the pieces cut into cubes of diameter at most `1/j`,
/// each carrying a similar copy of the unit-cube staircase of its value.
/// Copies are extended by zero outside their cube, so the field is `F` plus
/// potentials vanishing on every cube boundary.
#[derive(Clone, Debug)]
pub struct Stitched {
    pub j: usize,
    pub cubes: Vec<BoxPiece>,
    pub values: Vec<Point10>,
    pub in_approximation: Arc<InApproximation>,
    /// One unit-cube staircase per distinct value.
    pub references: Vec<Staircase>,
    pub reports: Vec<StaircaseReport>,
    pub data_div_residual: f64,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub volume: f64,
}

/// Subdivides the pieces and builds one reference staircase per value.
pub fn build_stitched(pieces: &[BoxPiece], j: usize, cfg: &StaircaseConfig, safety: f64) -> Result<Stitched> {
    if j == 0 {
        return Err(Error::InvalidParameter("j must be positive".into()));
    }
    if pieces.is_empty() {
        return Err(Error::InvalidParameter("no pieces".into()));
    }
    let data_div = box_data_div_residual(pieces)?;
    let scale = pieces.iter().map(|p| p.value.norm()).fold(1.0, f64::max);
    if data_div > 1e-10 * scale {
        return Err(Error::Certificate(format!(
            "data is not weakly divergence-free (residual {data_div:.3e})"
        )));
    }
    let mut cubes = Vec::new();
    for p in pieces {
        bisect_to(p, 1.0 / j as f64, &mut cubes);
    }
    for c in &cubes {
        let s = c.hi[0] - c.lo[0];
        if (1..3).any(|i| ((c.hi[i] - c.lo[i]) - s).abs() > 1e-12 * s) {
            return Err(Error::InvalidParameter(
                "bisection does not produce cubes for these pieces".into(),
            ));
        }
    }
    let mut values: Vec<Point10> = Vec::new();
    for c in &cubes {
        if !values.contains(&c.value) {
            values.push(c.value);
        }
    }
    let ia = Arc::new(crate::hulls::build_in_approximation(&values, cfg.i_max, safety)?);
    let mut references = Vec::new();
    let mut reports = Vec::new();
    for (k, v) in values.iter().enumerate() {
        let c = StaircaseConfig {
            seed: sample_seed(cfg.seed, 0x7374, k as u64),
            ..cfg.clone()
        };
        let (st, rep) = run_staircase(&[(Polytope::unit_cube(3), *v)], ia.clone(), c)?;
        references.push(st);
        reports.push(rep);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pieces {
        for i in 0..3 {
            lo[i] = lo[i].min(p.lo[i]);
            hi[i] = hi[i].max(p.hi[i]);
        }
    }
    let volume = pieces
        .iter()
        .map(|p| (0..3).map(|i| p.hi[i] - p.lo[i]).product::<f64>())
        .sum();
    Ok(Stitched {
        j,
        cubes,
        values,
        in_approximation: ia,
        references,
        reports,
        data_div_residual: data_div,
        lo,
        hi,
        volume,
    })
}

impl Stitched {
    fn reference_of(&self, c: &BoxPiece) -> usize {
        self.values.iter().position(|v| *v == c.value).expect("value listed")
    }

    /// Value at `x`, or `None` outside the pieces.
    pub fn value_at(&self, x: [f64; 3], idx: u64) -> Option<Point10> {
        let c = self
            .cubes
            .iter()
            .find(|c| (0..3).all(|i| x[i] >= c.lo[i] && x[i] <= c.hi[i]))?;
        let s = c.hi[0] - c.lo[0];
        let y: V3 = std::array::from_fn(|i| ((x[i] - c.lo[i]) / s).clamp(0.0, 1.0));
        self.references[self.reference_of(c)].value_at(y, idx)
    }

    /// Estimates `∫(V^j − F)φ` for every test function. On each cube the
    /// integrand is `(V − v)(φ − φ(center))`, exact in expectation because
    /// the cube mean of `V − v` vanishes; all cubes with one value share the
    /// reference samples.
    pub fn test(&self, suite: &[TestFunction], samples: usize, tau_total: f64) -> StitchReport {
        let r = self.in_approximation.radius_bound;
        let refs: Vec<Vec<([f64; 3], Point10)>> = self
            .references
            .iter()
            .map(|st| st.sample_final(samples, 0x7766))
            .collect();
        let mut max_dev: f64 = 0.0;
        for (k, v) in self.values.iter().enumerate() {
            for (_, w) in &refs[k] {
                max_dev = max_dev.max(w.dist(v));
            }
        }
        let mut rows = Vec::with_capacity(suite.len());
        for phi in suite {
            let mut acc = [0.0; 10];
            for c in &self.cubes {
                let k = self.reference_of(c);
                let s = c.hi[0] - c.lo[0];
                let center: V3 = std::array::from_fn(|i| c.lo[i] + 0.5 * s);
                let phi_c = phi.eval(center);
                let f = c.value.to_array();
                let ns = refs[k].len().max(1) as f64;
                for (y, w) in &refs[k] {
                    let x: V3 = std::array::from_fn(|i| c.lo[i] + s * y[i]);
                    let dphi = phi.eval(x) - phi_c;
                    let wv = w.to_array();
                    for t in 0..10 {
                        acc[t] += s.powi(3) * (wv[t] - f[t]) * dphi / ns;
                    }
                }
            }
            let lip = phi.lipschitz(self.lo, self.hi);
            let sup = phi.sup_bound(self.lo, self.hi);
            rows.push(ResidualRow {
                name: phi.name(),
                residual: crate::linalg::norm(&acc),
                bound: 2.0 * r * lip * self.volume / self.j as f64 + 2.0 * r * sup * tau_total * self.volume,
                lipschitz: lip,
                sup,
            });
        }
        let weak_div_bound =
            self.data_div_residual / self.volume + self.reports.iter().map(|r| r.weak_div_bound).fold(0.0, f64::max);
        let average_bound = self.reports.iter().map(|r| r.average_bound).fold(0.0, f64::max);
        let passed = rows.iter().all(|row| row.residual <= row.bound) && self.reports.iter().all(|r| r.passed);
        StitchReport {
            j: self.j,
            cubes: self.cubes.len(),
            side: self.cubes.iter().map(|c| c.hi[0] - c.lo[0]).fold(0.0, f64::max),
            radius_bound: r,
            max_deviation: max_dev,
            data_div_residual: self.data_div_residual,
            weak_div_bound,
            average_bound,
            references: self.reports.clone(),
            rows,
            passed,
        }
    }
}

/// Builds the stitched field and measures `∫(V^j − F)φ` for every test
/// function.
pub fn stitch_and_test(
    pieces: &[BoxPiece],
    j: usize,
    cfg: &StaircaseConfig,
    safety: f64,
    suite: &[TestFunction],
) -> Result<StitchReport> {
    Ok(build_stitched(pieces, j, cfg, safety)?.test(suite, cfg.samples, cfg.tau_total))
}
