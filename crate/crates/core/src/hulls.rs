//! Lamination-hull search, the finite-set shrink toward an anchor set, and
//! the in-approximation built from cubes around a compact set inside the
//! Born-Infeld hull.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::born_infeld::{check_hull_bounds, decompose_to_m};
use crate::linalg::{
    caratheodory_prune, dist, hull_membership, interior_margin, norm, rank_with_tol, Mat, Point10, MEMBERSHIP_TOL,
};
use crate::{Error, Result};

/// A finite list of points of R^d.
pub type FiniteSet = Vec<Vec<f64>>;

/// Rank tolerance for splitting directions, relative to the largest entry.
const RANK_TOL: f64 = 1e-9;

/// A binary tree certifying lamination-hull membership: leaves are elements
/// of `K`, every internal node is `λ·left + (1−λ)·right` with
/// `rank(left − right) ≤ n − 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum WitnessTree {
    Leaf {
        index: usize,
        value: Mat,
    },
    Node {
        lambda: f64,
        value: Mat,
        left: Box<WitnessTree>,
        right: Box<WitnessTree>,
    },
}

impl WitnessTree {
    pub fn value(&self) -> &Mat {
        match self {
            WitnessTree::Leaf { value, .. } | WitnessTree::Node { value, .. } => value,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            WitnessTree::Leaf { .. } => 0,
            WitnessTree::Node { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Re-checks leaf membership, rank conditions and the convex-combination
    /// arithmetic within `tol`.
    pub fn verify(&self, k: &[Mat], tol: f64) -> bool {
        match self {
            WitnessTree::Leaf { index, value } => k
                .get(*index)
                .map_or(false, |a| a.sub(value).max_abs() <= tol * (1.0 + a.max_abs())),
            WitnessTree::Node {
                lambda,
                value,
                left,
                right,
            } => {
                if !(*lambda >= 0.0 && *lambda <= 1.0) {
                    return false;
                }
                let (l, r) = (left.value(), right.value());
                let comb = l.scale(*lambda).add(&r.scale(1.0 - lambda));
                let n = value.cols();
                comb.sub(value).max_abs() <= tol * (1.0 + value.max_abs())
                    && rank_with_tol(&l.sub(r), RANK_TOL) <= n - 1
                    && left.verify(k, tol)
                    && right.verify(k, tol)
            }
        }
    }
}

/// Outcome of [`lamination_hull_contains`]. `found = false` means the
/// bounded search failed, not that `F` lies outside the hull.
#[derive(Clone, Debug, PartialEq)]
pub struct LaminationSearch {
    pub found: bool,
    pub tree: Option<WitnessTree>,
}

fn flat(m: &Mat) -> Vec<f64> {
    m.data().to_vec()
}

fn leaf_match(k: &[Mat], f: &Mat) -> Option<WitnessTree> {
    k.iter()
        .position(|a| a.sub(f).max_abs() <= 1e-12 * (1.0 + a.max_abs()))
        .map(|i| WitnessTree::Leaf {
            index: i,
            value: k[i].clone(),
        })
}

fn node(lambda: f64, left: WitnessTree, right: WitnessTree) -> WitnessTree {
    let value = left.value().scale(lambda).add(&right.value().scale(1.0 - lambda));
    WitnessTree::Node {
        lambda,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn admissible(d: &Mat) -> bool {
    d.max_abs() > 0.0 && rank_with_tol(d, RANK_TOL) <= d.cols() - 1
}

/// Balanced tree over weighted leaves, splitting each group into two halves.
fn balanced(k: &[Mat], items: &[(usize, f64)]) -> WitnessTree {
    if items.len() == 1 {
        return WitnessTree::Leaf {
            index: items[0].0,
            value: k[items[0].0].clone(),
        };
    }
    let mid = items.len() / 2;
    let wl: f64 = items[..mid].iter().map(|x| x.1).sum();
    let wr: f64 = items[mid..].iter().map(|x| x.1).sum();
    let norm_l: Vec<(usize, f64)> = items[..mid].iter().map(|&(i, w)| (i, w / wl)).collect();
    let norm_r: Vec<(usize, f64)> = items[mid..].iter().map(|&(i, w)| (i, w / wr)).collect();
    let left = balanced(k, &norm_l);
    let right = balanced(k, &norm_r);
    let lambda = wl / (wl + wr);
    // Node values recomputed from the exact weights of the group.
    let mut value = Mat::zeros(k[0].rows(), k[0].cols());
    for &(i, w) in items {
        value = value.add(&k[i].scale(w / (wl + wr)));
    }
    WitnessTree::Node {
        lambda,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Semi-decision procedure for `F ∈ K^{(depth)}`, the `depth`-th lamination
/// hull iterate along rank-`(n−1)` segments. `samples` bounds the number of
/// trial points per direction in the line search.
pub fn lamination_hull_contains(k: &[Mat], f: &Mat, depth: usize, samples: usize) -> Result<LaminationSearch> {
    if k.is_empty() {
        return Err(Error::EmptyAtoms);
    }
    if depth > 4 {
        return Err(Error::InvalidParameter(format!("depth {depth} > 4")));
    }
    if k.iter().any(|a| a.rows() != f.rows() || a.cols() != f.cols()) {
        return Err(Error::Dimension("K and F shapes differ".into()));
    }
    // Hull membership followed by a balanced tree, re-verified.
    let atoms: Vec<Vec<f64>> = k.iter().map(flat).collect();
    let mem = hull_membership(&flat(f), &atoms, MEMBERSHIP_TOL)?;
    if !mem.feasible {
        return Ok(LaminationSearch {
            found: false,
            tree: None,
        });
    }
    if let Some(t) = leaf_match(k, f) {
        return Ok(LaminationSearch {
            found: true,
            tree: Some(t),
        });
    }
    let support = caratheodory_prune(&flat(f), &atoms, &mem.weights)?;
    let tree = balanced(k, &support);
    if tree.depth() <= depth && tree.verify(k, 1e-9) {
        return Ok(LaminationSearch {
            found: true,
            tree: Some(tree),
        });
    }
    let tree = search(k, f, depth, samples.max(1));
    Ok(LaminationSearch {
        found: tree.is_some(),
        tree,
    })
}

fn search(k: &[Mat], f: &Mat, d: usize, samples: usize) -> Option<WitnessTree> {
    if let Some(t) = leaf_match(k, f) {
        return Some(t);
    }
    if d == 0 {
        return None;
    }
    let scale = k.iter().map(|a| a.sub(f).norm()).fold(0.0, f64::max);
    for (ia, a) in k.iter().enumerate() {
        let r = f.sub(a);
        if !admissible(&r) {
            continue;
        }
        let leaf = WitnessTree::Leaf {
            index: ia,
            value: a.clone(),
        };
        let rn = r.norm();
        // Other endpoint G = F + tR, with F = (t/(1+t))·A + (1/(1+t))·G.
        let mut ts: Vec<f64> = Vec::new();
        for b in k {
            let g = b.sub(f);
            let t = flat(&g).iter().zip(r.data()).map(|(x, y)| x * y).sum::<f64>() / (rn * rn);
            if t > 0.0 && g.sub(&r.scale(t)).max_abs() <= 1e-10 * (1.0 + scale) {
                ts.push(t);
            }
        }
        if d >= 2 {
            let tmax = 2.0 * scale / rn;
            ts.extend((1..=samples).map(|j| tmax * j as f64 / samples as f64));
        }
        for t in ts {
            let g = f.add(&r.scale(t));
            if let Some(sub) = search(k, &g, d - 1, samples) {
                return Some(node(t / (1.0 + t), leaf, sub));
            }
        }
    }
    None
}

/// Result of [`shrink_toward`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkResult {
    pub delta: f64,
    pub halvings: usize,
    /// `F'`, grouped by the source point: `points[q·|E| + p]`.
    pub points: FiniteSet,
    pub group_size: usize,
}

/// Maximum pairwise distance of a finite set.
pub fn diameter(e: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            d = d.max(dist(&e[i], &e[j]));
        }
    }
    d
}

/// `F' = ∪_q {δq + (1−δ)p : p ∈ E}` with `δ = min(½, ε/diam E)`, halved until
/// every `q` is interior to its group, every point of `F'` is interior to
/// `hull E`, and `dist(F', E) ≤ ε`.
pub fn shrink_toward(f: &[Vec<f64>], e: &[Vec<f64>], eps: f64) -> Result<ShrinkResult> {
    if f.is_empty() || e.is_empty() {
        return Err(Error::EmptyAtoms);
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    for (i, q) in f.iter().enumerate() {
        if interior_margin(q, e)?.0 <= 0.0 {
            return Err(Error::Membership(format!("point {i} of F is not interior to hull(E)")));
        }
    }
    let diam = diameter(e).max(f64::MIN_POSITIVE);
    let mut delta = 0.5f64.min(eps / diam);
    for halvings in 0..=20 {
        let points: FiniteSet = f
            .iter()
            .flat_map(|q| {
                e.iter()
                    .map(move |p| q.iter().zip(p).map(|(a, b)| delta * a + (1.0 - delta) * b).collect())
            })
            .collect();
        let mut ok = true;
        for (qi, q) in f.iter().enumerate() {
            let group = &points[qi * e.len()..(qi + 1) * e.len()];
            if interior_margin(q, group)?.0 <= 0.0 {
                ok = false;
                break;
            }
        }
        if ok {
            for (j, x) in points.iter().enumerate() {
                let p = &e[j % e.len()];
                if dist(x, p) > eps || interior_margin(x, e)?.0 <= 0.0 {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(ShrinkResult {
                delta,
                halvings,
                points,
                group_size: e.len(),
            });
        }
        delta *= 0.5;
    }
    Err(Error::Certificate(format!(
        "shrink certificates failed after 20 halvings (eps = {eps})"
    )))
}

/// A point of the in-approximation with its convex weights over the anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchoredPoint {
    pub value: Point10,
    pub weights: Vec<(usize, f64)>,
}

/// The cube around one point of the compact set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootCube {
    pub center: Point10,
    /// Half-width `δ(q)` of the cube whose corners form `F_1`.
    pub delta: f64,
    /// Lower bound on the inradius of `hull F_2` around the center.
    pub margin_in_f2: f64,
    /// The corners `q ± δ·(1,…,1)`, whose midpoint is `q`.
    pub kuhn: [AnchoredPoint; 2],
}

/// Per-level certified bounds. `F_{i+1} = {δ_i x + (1−δ_i)p : x ∈ F_i, p ∈ E}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InApproxLevel {
    pub level: usize,
    /// `δ_i`, the shrink factor producing `F_{i+1}`.
    pub shrink: f64,
    /// `1/i` (infinite at level 1).
    pub radius: f64,
    /// Lower bound on the inradius of `hull E` around every point of `F_i`.
    pub margin_lb: f64,
    /// Lower bound on the inradius of `hull F_{i+1}` around every point of `F_i`.
    pub nesting_margin_lb: f64,
    /// Upper bound on `dist(F_i, E)`.
    pub dist_ub: f64,
}

/// Finite descriptors of the open sets `U_i = Int hull F_{i+1} ∩ B_{1/i}(E)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InApproximation {
    pub anchors: Vec<Point10>,
    pub anchor_diameter: f64,
    /// `R = max |p|` over the anchors; every level lies in `B(0, R)`.
    pub radius_bound: f64,
    pub roots: Vec<RootCube>,
    pub levels: Vec<InApproxLevel>,
    pub safety: f64,
    /// Largest reconstruction error among the decompositions of the outer
    /// cube corners.
    pub decomposition_error: f64,
}

impl InApproximation {
    pub fn i_max(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> &InApproxLevel {
        &self.levels[i - 1]
    }

    /// Point of `F_i` reached from a root corner (`corner` indexes the ten
    /// sign bits) through anchors `path` (length `i − 1`).
    pub fn level_point(&self, root: usize, corner: u16, path: &[usize]) -> Point10 {
        let rc = &self.roots[root];
        let mut x = rc.center.to_array();
        for (k, v) in x.iter_mut().enumerate() {
            *v += if corner >> k & 1 == 1 { -rc.delta } else { rc.delta };
        }
        for (lvl, &p) in path.iter().enumerate() {
            let d = self.levels[lvl].shrink;
            let a = self.anchors[p].to_array();
            for k in 0..10 {
                x[k] = d * x[k] + (1.0 - d) * a[k];
            }
        }
        Point10::from_array(x)
    }

    /// Distance from `x` to the nearest anchor.
    pub fn dist_to_anchors(&self, x: &Point10) -> f64 {
        self.anchors.iter().map(|p| p.dist(x)).fold(f64::INFINITY, f64::min)
    }
}

/// Largest `δ` on the grid `k·2^{-10}` such that every corner of
/// `q + [−3δ, 3δ]^{10}` satisfies the inner bound (a convex condition, so
/// corners suffice).
pub fn inner_cube_delta(q: &Point10) -> Option<f64> {
    let fits = |d: f64| {
        let base = q.to_array();
        (0..1u32 << 10).all(|c| {
            let mut x = base;
            for (k, v) in x.iter_mut().enumerate() {
                *v += if c >> k & 1 == 1 { -3.0 * d } else { 3.0 * d };
            }
            check_hull_bounds(&Point10::from_array(x)).inner
        })
    };
    let step = 2f64.powi(-10);
    let (mut lo, mut hi) = (0u32, 1024u32);
    if !fits(step) {
        return None;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if fits(mid as f64 * step) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo.max(1) as f64 * step)
}

fn key(p: &Point10) -> [u64; 10] {
    let a = p.to_array();
    std::array::from_fn(|i| (a[i] + 0.0).to_bits())
}

/// Builds the in-approximation for the compact set `l`: cubes of half-width
/// `0.9·δ(q)` around each point, anchors from the closed-form decomposition of
/// the doubled cube corners, and shrink factors `δ_i = min(½, s/((i+1)·diam E))`
/// with safety factor `s`.
pub fn build_in_approximation(l: &[Point10], i_max: usize, safety: f64) -> Result<InApproximation> {
    if l.is_empty() {
        return Err(Error::EmptyAtoms);
    }
    if i_max < 1 {
        return Err(Error::InvalidParameter("i_max must be at least 1".into()));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidParameter(format!("safety = {safety} not in (0, 1]")));
    }
    let mut anchors: Vec<Point10> = Vec::new();
    let mut seen: BTreeMap<[u64; 10], usize> = BTreeMap::new();
    let mut deltas = Vec::new();
    let mut err_max: f64 = 0.0;
    for (qi, q) in l.iter().enumerate() {
        let d = inner_cube_delta(q).ok_or_else(|| {
            Error::Certificate(format!("point {qi} of L has insufficient inner-bound slack for a cube"))
        })? * 0.9;
        deltas.push(d);
        let base = q.to_array();
        for c in 0..1u32 << 10 {
            let mut g = base;
            for (k, v) in g.iter_mut().enumerate() {
                *v += if c >> k & 1 == 1 { -2.0 * d } else { 2.0 * d };
            }
            let gp = Point10::from_array(g);
            let dec = decompose_to_m(&gp)?;
            err_max = err_max.max(dec.barycenter().dist(&gp));
            for a in dec.atoms {
                seen.entry(key(&a)).or_insert_with(|| {
                    anchors.push(a);
                    anchors.len() - 1
                });
            }
        }
    }
    let e_flat: Vec<Vec<f64>> = anchors.iter().map(|p| p.to_array().to_vec()).collect();
    let diam = diameter(&e_flat);
    let r_bound = anchors.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let m1 = deltas.iter().cloned().fold(f64::INFINITY, f64::min) - err_max;
    if !(m1 > 0.0) {
        return Err(Error::Certificate(
            "anchor decompositions too inaccurate for a positive margin".into(),
        ));
    }
    let mut levels = Vec::with_capacity(i_max);
    let mut margin = m1;
    let mut dist_ub = f64::INFINITY;
    for i in 1..=i_max {
        let shrink = 0.5f64.min(safety / ((i + 1) as f64 * diam));
        levels.push(InApproxLevel {
            level: i,
            shrink,
            radius: if i == 1 { f64::INFINITY } else { 1.0 / i as f64 },
            margin_lb: margin,
            nesting_margin_lb: (1.0 - shrink) * margin,
            dist_ub,
        });
        margin *= shrink;
        dist_ub = shrink * diam;
    }
    let mut roots = Vec::with_capacity(l.len());
    for (q, &d) in l.iter().zip(&deltas) {
        let mut kuhn = Vec::with_capacity(2);
        for sgn in [1.0, -1.0] {
            let mut x = q.to_array();
            x.iter_mut().for_each(|v| *v += sgn * d);
            let mem = hull_membership(&x, &e_flat, MEMBERSHIP_TOL)?;
            if !mem.feasible {
                return Err(Error::Membership(format!("cube corner of {q:?} outside hull(E)")));
            }
            let weights = caratheodory_prune(&x, &e_flat, &mem.weights)?;
            kuhn.push(AnchoredPoint {
                value: Point10::from_array(x),
                weights,
            });
        }
        let kuhn: [AnchoredPoint; 2] = [kuhn.remove(0), kuhn.remove(0)];
        roots.push(RootCube {
            center: *q,
            delta: d,
            margin_in_f2: d + levels[0].nesting_margin_lb,
            kuhn,
        });
    }
    let out = InApproximation {
        anchors,
        anchor_diameter: diam,
        radius_bound: r_bound,
        roots,
        levels,
        safety,
        decomposition_error: err_max,
    };
    certify_in_approximation(&out)?;
    Ok(out)
}

/// Re-checks the level bounds: positive margins, `dist(F_i, E) ≤ 1/i` for
/// `i ≥ 2`, root centers interior to `hull F_2`, and root corners
/// reconstructed from their anchor weights.
pub fn certify_in_approximation(ia: &InApproximation) -> Result<()> {
    for lv in &ia.levels {
        if !(lv.margin_lb > 0.0 && lv.nesting_margin_lb > 0.0) {
            return Err(Error::Certificate(format!("level {} margin not positive", lv.level)));
        }
        if lv.level >= 2 && lv.dist_ub > 1.0 / lv.level as f64 {
            return Err(Error::Certificate(format!(
                "level {} anchor distance {} > 1/i",
                lv.level, lv.dist_ub
            )));
        }
    }
    for rc in &ia.roots {
        if !(rc.margin_in_f2 > 0.0) {
            return Err(Error::Certificate("root center not interior to hull F_2".into()));
        }
        for kp in &rc.kuhn {
            let mut acc = [0.0; 10];
            let s: f64 = kp.weights.iter().map(|w| w.1).sum();
            for &(i, w) in &kp.weights {
                for (a, v) in acc.iter_mut().zip(ia.anchors[i].to_array()) {
                    *a += w * v;
                }
            }
            let err = norm(
                &acc.iter()
                    .zip(kp.value.to_array())
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            if err > 1e-9 || (s - 1.0).abs() > 1e-9 || kp.weights.len() > 11 {
                return Err(Error::Certificate(format!("root corner decomposition error {err:.3e}")));
            }
        }
    }
    Ok(())
}
