//! The subcommands. Each writes its artifacts to the output directory and
//! returns the names of the certificates that failed.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use solenoid_core::born_infeld::{check_hull_bounds, decompose_to_m, lift, HullBounds, MDecomposition};
use solenoid_core::fields::{
    average, empirical_measure, polynomial_test_suite, relative_div_residuals, PiecewiseConstantField, Value,
};
use solenoid_core::geometry::Polytope;
use solenoid_core::hulls::{build_in_approximation, certify_in_approximation, InApproximation};
use solenoid_core::laminate::{build_bi_laminate, build_laminate, BILaminateSpec, LaminateSpec};
use solenoid_core::staircase::{
    build_stitched, default_test_suite, run_staircase, BoxPiece, Staircase, StaircaseConfig, StaircaseReport, Stitched,
};
use solenoid_core::symbol::{constant_rank_check, witness_check, ConstantRankReport, WitnessReport};
use solenoid_core::{Mat, Point10};

use crate::config::{require, BoxDomain, PieceConfig, RunConfig, Tolerances};
use crate::descriptor::{
    FieldDescriptor, FieldKind, PiecewiseDesc, Provenance, StaircaseDesc, StitchDesc, DESCRIPTOR_VERSION,
};
use crate::error::{CliError, CliResult};
use crate::output::{hash_json, read_file, to_compact_json, to_json, write_atomic};

/// Shared state of one invocation.
pub struct Ctx {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub tol: Tolerances,
    pub config_hash: String,
}

impl Ctx {
    pub fn new(command: &'static str, mut cfg: RunConfig) -> CliResult<Self> {
        cfg.check_command(command)?;
        let out = cfg.out.take().unwrap_or_else(|| PathBuf::from("."));
        cfg.command = Some(command.to_string());
        let seed = cfg.seed.unwrap_or(0);
        let tol = cfg.tolerances.clone().unwrap_or_default();
        let config_hash = hash_json(&cfg)?;
        Ok(Ctx {
            command,
            cfg,
            out,
            seed,
            tol,
            config_hash,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            command: self.command.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }

    /// Writes `report.json` with the config, its hash and the tolerances.
    fn write_report<T: Serialize>(&self, report: &T, failures: &[String]) -> CliResult<()> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            command: &'a str,
            config_hash: &'a str,
            seed: u64,
            config: &'a RunConfig,
            tolerances: &'a Tolerances,
            passed: bool,
            failures: &'a [String],
            report: &'a T,
        }
        let env = Envelope {
            command: self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            config: &self.cfg,
            tolerances: &self.tol,
            passed: failures.is_empty(),
            failures,
            report,
        };
        write_atomic(&self.out, "report.json", &to_json(&env)?)?;
        Ok(())
    }

    fn write_field(&self, field: FieldKind) -> CliResult<()> {
        let d = FieldDescriptor {
            version: DESCRIPTOR_VERSION.into(),
            field,
            provenance: self.provenance(),
        };
        write_atomic(&self.out, "field.json", &to_compact_json(&d)?)?;
        Ok(())
    }
}

fn domain_polytope(d: Option<&BoxDomain>, n: usize) -> CliResult<Polytope> {
    match d {
        Some(b) => {
            require("domain", b.lo.len() == n && b.hi.len() == n)?;
            Ok(Polytope::cuboid(&b.lo, &b.hi)?)
        }
        None => Ok(Polytope::unit_cube(n)),
    }
}

fn mat_from_rows(name: &str, rows: &[Vec<f64>]) -> CliResult<Mat> {
    Mat::from_rows(rows).map_err(|e| CliError::Config(format!("`{name}`: {e}")))
}

/// Certificates shared by every materialized field.
#[derive(Clone, Debug, Serialize)]
pub struct FieldCheck {
    pub pieces: usize,
    pub sup_norm: f64,
    /// Largest relative weak divergence over the test suite.
    pub div_residual: f64,
    pub test_functions: usize,
    /// `|average(V) − F| / max(1, |F|)`.
    pub average_error: f64,
    pub covered_fraction: f64,
}

pub fn check_field(field: &PiecewiseConstantField, target: &[f64]) -> CliResult<FieldCheck> {
    let domain = &field.partition.domain;
    let suite = polynomial_test_suite(domain);
    let div = relative_div_residuals(field, &suite)?.into_iter().fold(0.0, f64::max);
    let avg = average(field).flatten();
    let err = avg.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = target.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    Ok(FieldCheck {
        pieces: field.partition.len(),
        sup_norm: field.sup_norm(),
        div_residual: div,
        test_functions: suite.len(),
        average_error: err / scale,
        covered_fraction: field.partition.covered_volume() / domain.volume(),
    })
}

fn field_failures(c: &FieldCheck, tol: &Tolerances, out: &mut Vec<String>) {
    if !(c.div_residual <= tol.div) {
        out.push(format!(
            "weak divergence {:.3e} exceeds {:.1e}",
            c.div_residual, tol.div
        ));
    }
    if !(c.average_error <= tol.average) {
        out.push(format!(
            "average error {:.3e} exceeds {:.1e}",
            c.average_error, tol.average
        ));
    }
}

#[derive(Serialize)]
struct LaminateReport {
    theta: f64,
    delta: f64,
    tau: f64,
    eps: f64,
    cells: usize,
    potential_sup: f64,
    potential_boundary_max: f64,
    /// Volume fraction with `dist(V, {A, B}) < δ`.
    near_fraction: f64,
    weights: Vec<f64>,
    check: FieldCheck,
}

pub fn laminate(ctx: &Ctx) -> CliResult<Vec<String>> {
    let c = &ctx.cfg;
    let a = mat_from_rows("a", c.a.as_deref().unwrap_or(&[vec![1.0, 0.0]]))?;
    let b = mat_from_rows("b", c.b.as_deref().unwrap_or(&[vec![-1.0, 0.0]]))?;
    let theta = c.theta.unwrap_or(0.5);
    let delta = c.delta.unwrap_or(0.1);
    let tau = c.tau.unwrap_or(0.05);
    require("tau", tau > 0.0 && tau < 1.0)?;
    let domain = domain_polytope(c.domain.as_ref(), a.cols())?;
    let spec = LaminateSpec::new(a.clone(), b.clone(), theta, delta)?;
    let lam = build_laminate(&spec, &domain, tau)?;
    let target = spec.average().data().to_vec();
    let check = check_field(&lam.field, &target)?;
    let em = empirical_measure(&lam.field, &[Value::new(a), Value::new(b)], delta)?;
    let report = LaminateReport {
        theta,
        delta,
        tau,
        eps: lam.eps,
        cells: lam.complex.len(),
        potential_sup: lam.potential.sup_norm(),
        potential_boundary_max: lam.potential.max_boundary_value(ctx.seed),
        near_fraction: 1.0 - lam.far_fraction(),
        weights: em.weights.clone(),
        check,
    };
    let mut fails = Vec::new();
    field_failures(&report.check, &ctx.tol, &mut fails);
    if !(report.potential_sup < delta) {
        fails.push(format!("sup |G| = {:.3e} not below delta", report.potential_sup));
    }
    if !(report.potential_boundary_max <= 1e-10) {
        fails.push(format!(
            "G on the boundary reaches {:.3e}",
            report.potential_boundary_max
        ));
    }
    if !(report.near_fraction >= 1.0 - tau) {
        fails.push(format!("near fraction {:.4} below 1 - tau", report.near_fraction));
    }
    ctx.write_field(FieldKind::PiecewiseConstant(PiecewiseDesc::from_field(
        &lam.field,
        Some(&lam.potential),
        target,
    )))?;
    ctx.write_report(&report, &fails)?;
    Ok(fails)
}

fn point(a: &[f64; 10]) -> Point10 {
    Point10::from_array(*a)
}

fn bi_flat(p: &Point10) -> Vec<f64> {
    let mut v = p.db_rows().data().to_vec();
    v.extend_from_slice(&[p.p[0], p.p[1], p.p[2], p.h]);
    v
}

#[derive(Serialize)]
struct BILaminateReport {
    theta: f64,
    delta: f64,
    delta_prime: f64,
    eta: f64,
    tau: f64,
    near_fraction: f64,
    check: FieldCheck,
}

pub fn bi_laminate(ctx: &Ctx) -> CliResult<Vec<String>> {
    let c = &ctx.cfg;
    let m =
        c.m.map(|a| point(&a))
            .unwrap_or_else(|| lift([0.5, 0.0, 0.0], [0.0, 0.3, 0.0]));
    let n =
        c.n.map(|a| point(&a))
            .unwrap_or_else(|| lift([-0.5, 0.0, 0.0], [0.0, 0.0, 0.2]));
    let theta = c.theta.unwrap_or(0.5);
    let delta = c.delta.unwrap_or(0.4);
    let tau = c.tau.unwrap_or(0.5);
    require("tau", tau > 0.0 && tau < 1.0)?;
    let domain = domain_polytope(c.domain.as_ref(), 3)?;
    let spec = BILaminateSpec { m, n, theta, delta };
    let lam = build_bi_laminate(&spec, &domain, tau)?;
    let target = bi_flat(&spec.average());
    let check = check_field(&lam.field, &target)?;
    let (mv, nv) = (bi_flat(&m), bi_flat(&n));
    let part = &lam.field.partition;
    let near_vol: f64 = part
        .pieces
        .iter()
        .zip(&lam.field.values)
        .filter(|(_, v)| {
            let f = v.flatten();
            let d = |t: &[f64]| f.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            d(&mv).min(d(&nv)) < delta
        })
        .map(|(s, _)| s.volume())
        .sum();
    let report = BILaminateReport {
        theta,
        delta,
        delta_prime: lam.delta_prime,
        eta: lam.eta,
        tau,
        near_fraction: near_vol / part.domain.volume(),
        check,
    };
    let mut fails = Vec::new();
    field_failures(&report.check, &ctx.tol, &mut fails);
    let potential = lam.inner.as_ref().map(|l| &l.potential);
    let desc = PiecewiseDesc::from_field(&lam.field, potential, target);
    ctx.write_field(FieldKind::PiecewiseConstant(desc))?;
    ctx.write_report(&report, &fails)?;
    Ok(fails)
}

fn default_points() -> Vec<[f64; 10]> {
    vec![
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.5],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 5f64.sqrt()],
    ]
}

#[derive(Serialize)]
struct HullRow {
    point: [f64; 10],
    bounds: HullBounds,
    verdict: &'static str,
}

/// Classifies points against the hull bounds. The verdict is data: the
/// command succeeds whatever the status.
pub fn hull_check(ctx: &Ctx) -> CliResult<Vec<String>> {
    let pts = ctx.cfg.points.clone().unwrap_or_else(default_points);
    let rows: Vec<HullRow> = pts
        .iter()
        .map(|p| {
            let bounds = check_hull_bounds(&point(p));
            let verdict = if bounds.inner {
                "in hull (inner bound)"
            } else if !bounds.outer {
                "not in hull (outer bound violated)"
            } else if !bounds.serre {
                "not in hull (Serre violated)"
            } else {
                "undecided"
            };
            HullRow {
                point: *p,
                bounds,
                verdict,
            }
        })
        .collect();
    for r in &rows {
        println!("{:?}: {}", r.point, r.verdict);
    }
    ctx.write_report(&rows, &[])?;
    Ok(Vec::new())
}

#[derive(Serialize)]
struct DecomposeRow {
    point: [f64; 10],
    decomposition: Option<MDecomposition>,
    max_defect: Option<f64>,
    reconstruction_error: Option<f64>,
    error: Option<String>,
}

pub fn decompose(ctx: &Ctx) -> CliResult<Vec<String>> {
    let pts = ctx
        .cfg
        .points
        .clone()
        .unwrap_or_else(|| vec![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]]);
    let mut fails = Vec::new();
    let rows: Vec<DecomposeRow> = pts
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let x = point(p);
            match decompose_to_m(&x) {
                Ok(d) => DecomposeRow {
                    point: *p,
                    max_defect: Some(d.max_defect()),
                    reconstruction_error: Some(d.barycenter().dist(&x)),
                    decomposition: Some(d),
                    error: None,
                },
                Err(e) => {
                    fails.push(format!("point {k}: {e}"));
                    DecomposeRow {
                        point: *p,
                        decomposition: None,
                        max_defect: None,
                        reconstruction_error: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    ctx.write_report(&rows, &fails)?;
    Ok(fails)
}

#[derive(Serialize)]
struct InApproxReport<'a> {
    i_max: usize,
    safety: f64,
    anchors: usize,
    root_deltas: Vec<f64>,
    root_margins: Vec<f64>,
    certified: bool,
    in_approximation: &'a InApproximation,
}

pub fn build_ia(cfg: &RunConfig, default_i_max: usize) -> CliResult<(Vec<Point10>, InApproximation)> {
    let l: Vec<Point10> = cfg
        .compact_set
        .clone()
        .unwrap_or_else(|| vec![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]])
        .iter()
        .map(point)
        .collect();
    let i_max = cfg.i_max.unwrap_or(default_i_max);
    require("i_max", i_max >= 1)?;
    let safety = cfg.safety.unwrap_or(0.9);
    require("safety", safety > 0.0 && safety < 1.0)?;
    let ia = build_in_approximation(&l, i_max, safety)?;
    Ok((l, ia))
}

pub fn in_approx(ctx: &Ctx) -> CliResult<Vec<String>> {
    let (_, ia) = build_ia(&ctx.cfg, 4)?;
    let mut fails = Vec::new();
    if let Err(e) = certify_in_approximation(&ia) {
        fails.push(e.to_string());
    }
    let report = InApproxReport {
        i_max: ia.i_max(),
        safety: ia.safety,
        anchors: ia.anchors.len(),
        root_deltas: ia.roots.iter().map(|r| r.delta).collect(),
        root_margins: ia.roots.iter().map(|r| r.margin_in_f2).collect(),
        certified: fails.is_empty(),
        in_approximation: &ia,
    };
    ctx.write_report(&report, &fails)?;
    Ok(fails)
}

fn staircase_config(cfg: &RunConfig, seed: u64) -> CliResult<StaircaseConfig> {
    let d = StaircaseConfig::default();
    let c = StaircaseConfig {
        i_max: cfg.i_max.unwrap_or(d.i_max),
        tau_total: cfg.tau.unwrap_or(d.tau_total),
        delta1: cfg.delta.unwrap_or(d.delta1),
        samples: cfg.samples.unwrap_or(d.samples),
        gap_samples: cfg.gap_samples.unwrap_or(d.gap_samples),
        depth_max: cfg.depth_max.unwrap_or(d.depth_max),
        cell_levels: cfg.cell_levels.unwrap_or(d.cell_levels),
        seed,
    };
    require("i_max", c.i_max >= 1)?;
    require("tau", c.tau_total > 0.0 && c.tau_total < 1.0)?;
    require("delta", c.delta1 > 0.0 && c.delta1 <= 1.0)?;
    require("samples", c.samples >= 2 && c.gap_samples >= 2)?;
    require("depth_max", c.depth_max >= 1 && c.depth_max <= 40)?;
    Ok(c)
}

const DEFAULT_VALUE: [f64; 10] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0];

fn run_staircase_desc(d: &StaircaseDesc) -> CliResult<(Staircase, StaircaseReport)> {
    let v = point(&d.value);
    let ia = build_in_approximation(&[v], d.config.i_max, d.safety)?;
    Ok(run_staircase(
        &[(Polytope::unit_cube(3), v)],
        Arc::new(ia),
        d.config.clone(),
    )?)
}

fn staircase_failures(r: &StaircaseReport, value: &Point10, tol: &Tolerances, out: &mut Vec<String>) {
    if !r.schedule_ok {
        out.push("schedule invariants".into());
    }
    if !(r.final_in_u_fraction >= 1.0 - r.tau_total) {
        out.push(format!(
            "fraction in U_{} is {:.4}, below 1 - tau",
            r.i_max, r.final_in_u_fraction
        ));
    }
    if !(r.final_dist_fraction >= 1.0 - r.tau_total) {
        out.push(format!(
            "fraction within 1/{} of the anchors is {:.4}, below 1 - tau",
            r.i_max, r.final_dist_fraction
        ));
    }
    if !(r.weak_div_bound <= tol.div) {
        out.push(format!(
            "weak divergence bound {:.3e} exceeds {:.1e}",
            r.weak_div_bound, tol.div
        ));
    }
    if !(r.average_bound <= tol.average * value.norm().max(1.0)) {
        out.push(format!(
            "average bound {:.3e} exceeds {:.1e}",
            r.average_bound, tol.average
        ));
    }
}

fn staircase_desc(ctx: &Ctx) -> CliResult<StaircaseDesc> {
    let safety = ctx.cfg.safety.unwrap_or(0.9);
    require("safety", safety > 0.0 && safety < 1.0)?;
    Ok(StaircaseDesc {
        value: ctx.cfg.value.unwrap_or(DEFAULT_VALUE),
        safety,
        config: staircase_config(&ctx.cfg, ctx.seed)?,
    })
}

pub fn staircase(ctx: &Ctx) -> CliResult<Vec<String>> {
    let desc = staircase_desc(ctx)?;
    let (_, report) = run_staircase_desc(&desc)?;
    let mut fails = Vec::new();
    staircase_failures(&report, &point(&desc.value), &ctx.tol, &mut fails);
    ctx.write_field(FieldKind::Staircase(desc))?;
    ctx.write_report(&report, &fails)?;
    Ok(fails)
}

fn default_pieces() -> Vec<PieceConfig> {
    vec![
        PieceConfig {
            lo: [0.0; 3],
            hi: [0.5, 1.0, 1.0],
            value: DEFAULT_VALUE,
        },
        PieceConfig {
            lo: [0.5, 0.0, 0.0],
            hi: [1.0; 3],
            value: [0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.2],
        },
    ]
}

fn build_stitch_desc(d: &StitchDesc) -> CliResult<Stitched> {
    let pieces: Vec<BoxPiece> = d
        .pieces
        .iter()
        .map(|p| BoxPiece {
            lo: p.lo,
            hi: p.hi,
            value: point(&p.value),
        })
        .collect();
    Ok(build_stitched(&pieces, d.j, &d.config, d.safety)?)
}

fn stitch_desc(ctx: &Ctx) -> CliResult<StitchDesc> {
    let safety = ctx.cfg.safety.unwrap_or(0.9);
    require("safety", safety > 0.0 && safety < 1.0)?;
    let j = ctx.cfg.j.unwrap_or(2);
    require("j", j >= 1 && j <= 64)?;
    Ok(StitchDesc {
        pieces: ctx.cfg.pieces.clone().unwrap_or_else(default_pieces),
        j,
        safety,
        random_tests: ctx.cfg.random_tests.unwrap_or(5),
        config: staircase_config(&ctx.cfg, ctx.seed)?,
    })
}

fn stitch_run(d: &StitchDesc, tol: &Tolerances) -> CliResult<(solenoid_core::staircase::StitchReport, Vec<String>)> {
    let s = build_stitch_desc(d)?;
    let suite = default_test_suite(d.random_tests, d.config.seed);
    let report = s.test(&suite, d.config.samples, d.config.tau_total);
    let mut fails = Vec::new();
    for row in &report.rows {
        if !(row.residual <= row.bound) {
            fails.push(format!(
                "weak* residual of {} is {:.3e}, above {:.3e}",
                row.name, row.residual, row.bound
            ));
        }
    }
    for (v, r) in s.values.iter().zip(&report.references) {
        staircase_failures(r, v, tol, &mut fails);
    }
    if !(report.data_div_residual <= tol.div * s.values.iter().map(|v| v.norm()).fold(1.0, f64::max)) {
        fails.push("data weak divergence".into());
    }
    Ok((report, fails))
}

pub fn stitch(ctx: &Ctx) -> CliResult<Vec<String>> {
    let desc = stitch_desc(ctx)?;
    let (report, fails) = stitch_run(&desc, &ctx.tol)?;
    ctx.write_field(FieldKind::Stitch(desc))?;
    ctx.write_report(&report, &fails)?;
    Ok(fails)
}

fn load_descriptor(cfg: &RunConfig) -> CliResult<FieldDescriptor> {
    let path = cfg
        .field
        .as_ref()
        .ok_or_else(|| CliError::Config("`field` (a field descriptor path) is required".into()))?;
    let bytes = read_file(path)?;
    let d: FieldDescriptor =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if d.version != DESCRIPTOR_VERSION {
        return Err(CliError::Config(format!(
            "unsupported descriptor version {}",
            d.version
        )));
    }
    Ok(d)
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum VerifyReport {
    PiecewiseConstant {
        check: FieldCheck,
        potential_sup: Option<f64>,
        potential_boundary_max: Option<f64>,
    },
    Staircase {
        report: StaircaseReport,
    },
    Stitch {
        report: solenoid_core::staircase::StitchReport,
    },
}

/// Re-derives the certificates of a stored field.
pub fn verify(ctx: &Ctx) -> CliResult<Vec<String>> {
    let d = load_descriptor(&ctx.cfg)?;
    let mut fails = Vec::new();
    let report = match &d.field {
        FieldKind::PiecewiseConstant(p) => {
            let (field, pot) = p.to_field()?;
            let check = check_field(&field, &p.target_average)?;
            field_failures(&check, &ctx.tol, &mut fails);
            let boundary = pot.as_ref().map(|g| g.max_boundary_value(ctx.seed));
            if let Some(b) = boundary {
                if !(b <= 1e-10) {
                    fails.push(format!("potential on cell boundaries reaches {b:.3e}"));
                }
            }
            VerifyReport::PiecewiseConstant {
                check,
                potential_sup: pot.as_ref().map(|g| g.sup_norm()),
                potential_boundary_max: boundary,
            }
        }
        FieldKind::Staircase(s) => {
            let (_, report) = run_staircase_desc(s)?;
            staircase_failures(&report, &point(&s.value), &ctx.tol, &mut fails);
            VerifyReport::Staircase { report }
        }
        FieldKind::Stitch(s) => {
            let (report, f) = stitch_run(s, &ctx.tol)?;
            fails.extend(f);
            VerifyReport::Stitch { report }
        }
    };
    ctx.write_report(&report, &fails)?;
    Ok(fails)
}

#[derive(Serialize)]
struct SymbolReport {
    constant_rank: ConstantRankReport,
    witness: WitnessReport,
}

pub fn symbol_check(ctx: &Ctx) -> CliResult<Vec<String>> {
    let rank = constant_rank_check(ctx.cfg.samples.unwrap_or(1000), ctx.seed);
    let witness = witness_check(ctx.cfg.witness_samples.unwrap_or(10_000), ctx.seed.wrapping_add(1));
    let mut fails = Vec::new();
    if !rank.passed() {
        fails.push(format!(
            "symbol rank differs from 2 in {} directions",
            rank.failures.len()
        ));
    }
    if !(witness.max_relative_residual <= ctx.tol.symbol) {
        fails.push(format!(
            "witness residual {:.3e} exceeds {:.1e}",
            witness.max_relative_residual, ctx.tol.symbol
        ));
    }
    ctx.write_report(
        &SymbolReport {
            constant_rank: rank,
            witness,
        },
        &fails,
    )?;
    Ok(fails)
}

/// A field that can be sampled on a grid.
enum Sampler {
    Piecewise(PiecewiseConstantField),
    Staircase(Staircase),
    Stitch(Stitched),
}

impl Sampler {
    fn bbox(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Sampler::Piecewise(f) => f.partition.domain.bbox(),
            Sampler::Staircase(_) => (vec![0.0; 3], vec![1.0; 3]),
            Sampler::Stitch(s) => (s.lo.to_vec(), s.hi.to_vec()),
        }
    }

    /// Cell id and components at `x`; `idx` seeds procedural evaluation.
    fn sample(&self, x: &[f64], idx: u64) -> (i64, Vec<f64>) {
        match self {
            Sampler::Piecewise(f) => {
                let cell = f.partition.locate(x).map(|i| f.partition.owner[i] as i64).unwrap_or(-1);
                (cell, f.eval(x).flatten())
            }
            Sampler::Staircase(st) => {
                let v = st.value_at([x[0], x[1], x[2]], idx).unwrap_or_default();
                (0, v.to_array().to_vec())
            }
            Sampler::Stitch(s) => {
                let p = [x[0], x[1], x[2]];
                let cell = s
                    .cubes
                    .iter()
                    .position(|c| (0..3).all(|i| p[i] >= c.lo[i] && p[i] <= c.hi[i]));
                let v = s.value_at(p, idx).unwrap_or_default();
                (cell.map(|c| c as i64).unwrap_or(-1), v.to_array().to_vec())
            }
        }
    }
}

/// Cell-centered grid of spacing `h` over the box.
struct Grid {
    lo: Vec<f64>,
    h: f64,
    counts: Vec<usize>,
}

impl Grid {
    fn new(lo: Vec<f64>, hi: &[f64], h: f64) -> Self {
        let counts = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| (((b - a) / h).round() as usize).max(1))
            .collect();
        Grid { lo, h, counts }
    }

    fn len(&self) -> usize {
        self.counts.iter().product()
    }

    /// Point `k`, first coordinate fastest.
    fn point(&self, k: usize) -> Vec<f64> {
        let mut rem = k;
        self.counts
            .iter()
            .zip(&self.lo)
            .map(|(&c, &lo)| {
                let i = rem % c;
                rem /= c;
                lo + (i as f64 + 0.5) * self.h
            })
            .collect()
    }
}

fn grid_samples(s: &Sampler, grid: &Grid) -> Vec<(Vec<f64>, i64, Vec<f64>)> {
    (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            let (c, v) = s.sample(&x, k as u64);
            (x, c, v)
        })
        .collect()
}

fn export_csv(rows: &[(Vec<f64>, i64, Vec<f64>)]) -> String {
    let mut out = String::new();
    let (n, k) = rows.first().map(|r| (r.0.len(), r.2.len())).unwrap_or((0, 0));
    let mut head: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    head.push("cell".into());
    head.extend((1..=k).map(|i| format!("comp_{i}")));
    out.push_str(&head.join(","));
    out.push('\n');
    for (x, c, v) in rows {
        let mut cols: Vec<String> = x.iter().map(|a| a.to_string()).collect();
        cols.push(c.to_string());
        cols.extend(v.iter().map(|a| a.to_string()));
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

fn export_vtk(grid: &Grid, rows: &[(Vec<f64>, i64, Vec<f64>)]) -> String {
    let mut out = String::new();
    let dim = |i: usize| grid.counts.get(i).copied().unwrap_or(1);
    let org = |i: usize| grid.lo.get(i).map(|v| v + 0.5 * grid.h).unwrap_or(0.0);
    let _ = writeln!(
        out,
        "# vtk DataFile Version 3.0\nsolenoid field\nASCII\nDATASET STRUCTURED_POINTS"
    );
    let _ = writeln!(out, "DIMENSIONS {} {} {}", dim(0), dim(1), dim(2));
    let _ = writeln!(out, "ORIGIN {} {} {}", org(0), org(1), org(2));
    let _ = writeln!(out, "SPACING {} {} {}", grid.h, grid.h, grid.h);
    let _ = writeln!(out, "POINT_DATA {}", rows.len());
    let _ = writeln!(out, "SCALARS cell int 1\nLOOKUP_TABLE default");
    for r in rows {
        let _ = writeln!(out, "{}", r.1);
    }
    let k = rows.first().map(|r| r.2.len()).unwrap_or(0);
    for c in 0..k {
        let _ = writeln!(out, "SCALARS comp_{} double 1\nLOOKUP_TABLE default", c + 1);
        for r in rows {
            let _ = writeln!(out, "{}", r.2[c]);
        }
    }
    out
}

pub fn export(ctx: &Ctx) -> CliResult<Vec<String>> {
    let d = load_descriptor(&ctx.cfg)?;
    let format = ctx.cfg.format.clone().unwrap_or_else(|| "json".into());
    match format.as_str() {
        "json" => {
            write_atomic(&ctx.out, "export.json", &to_compact_json(&d)?)?;
            return Ok(Vec::new());
        }
        "csv" | "vtk" => {}
        other => return Err(CliError::Config(format!("unknown format `{other}` (json, csv, vtk)"))),
    }
    let h = ctx.cfg.grid_h.unwrap_or(1.0 / 32.0);
    require("grid_h", h > 0.0 && h.is_finite())?;
    let sampler = match &d.field {
        FieldKind::PiecewiseConstant(p) => Sampler::Piecewise(p.to_field()?.0),
        FieldKind::Staircase(s) => Sampler::Staircase(run_staircase_desc(s)?.0),
        FieldKind::Stitch(s) => Sampler::Stitch(build_stitch_desc(s)?),
    };
    let (lo, hi) = sampler.bbox();
    let grid = Grid::new(lo, &hi, h);
    if grid.len() > 50_000_000 {
        return Err(CliError::Config(format!("grid of {} points is too large", grid.len())));
    }
    let rows = grid_samples(&sampler, &grid);
    let (name, text) = if format == "csv" {
        ("export.csv", export_csv(&rows))
    } else {
        ("export.vtk", export_vtk(&grid, &rows))
    };
    write_atomic(&ctx.out, name, text.as_bytes())?;
    Ok(Vec::new())
}
