use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use solenoid_core::born_infeld::{check_hull_bounds, decompose_axis_point, decompose_to_m, lift, Axis, HullStatus};
use solenoid_core::domains::diamond;
use solenoid_core::linalg::{norm, Point10};

const DIV_TOL: f64 = 1e-10;
const AVERAGE_TOL: f64 = 1e-10;
const POTENTIAL_SUP: f64 = 0.1;
const BOUNDARY_TOL: f64 = 1e-10;
const LAMINATE_NEAR_MIN: f64 = 0.95;
const WEIGHT_TOL: f64 = 0.06;
const GEOMETRY_TOL: f64 = 1e-12;
const DEFECT_TOL: f64 = 1e-9;
const SIMPLEX_TOL: f64 = 1e-12;
const RECONSTRUCTION_TOL: f64 = 1e-9;
const ROOT_DELTA_MAX: f64 = 0.0537;
const STAIRCASE_NEAR_MIN: f64 = 0.85;
const RATE_RATIO: f64 = 0.6;
const SYMBOL_TOL: f64 = 1e-12;

/// One CLI invocation and what it left behind.
struct Run {
    code: i32,
    dir: PathBuf,
    secs: f64,
}

impl Run {
    fn report(&self) -> Value {
        let bytes = std::fs::read(self.dir.join("report.json")).expect("report.json");
        serde_json::from_slice::<Value>(&bytes).unwrap()["report"].clone()
    }
}

fn solenoid(out: &Path, args: &[&str]) -> Run {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_solenoid"))
        .env_remove("SOLENOID_LOG")
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn solenoid")
        .status;
    Run {
        code: status.code().unwrap_or(-1),
        dir: out.to_path_buf(),
        secs: start.elapsed().as_secs_f64(),
    }
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn nums(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().map(num).collect()).unwrap_or_default()
}

/// Outcome of one criterion.
struct Verdict {
    ok: bool,
    detail: String,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            ok: true,
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&what);
        if !ok {
            self.ok = false;
            self.detail.push_str(" [FAILED]");
        }
    }

    fn timed(&mut self, label: &str, s: f64, limit: f64) {
        self.check(s < limit, format!("{label} {s:.2}s < {limit}s"));
    }
}

/// Every CLI invocation the criteria inspect, keyed by a short name.
fn invocations(dir: &Path) -> Vec<(&'static str, Vec<String>)> {
    let bi25 = dir.join("bi25.json");
    let field = dir.join("laminate-field.json");
    let p = |p: &Path| p.to_str().unwrap().to_string();
    let v = |a: &[&str]| a.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    vec![
        ("laminate", v(&["laminate"])),
        ("bi-laminate", v(&["bi-laminate"])),
        (
            "bi-laminate-skew",
            vec!["bi-laminate".into(), "--config".into(), p(&bi25)],
        ),
        ("staircase", v(&["staircase"])),
        ("stitch-2", v(&["stitch", "--j", "2"])),
        ("stitch-4", v(&["stitch", "--j", "4"])),
        ("stitch-8", v(&["stitch", "--j", "8"])),
        ("in-approx", v(&["in-approx", "--i-max", "4"])),
        ("symbol-check", v(&["symbol-check"])),
        ("hull-check", v(&["hull-check"])),
        ("decompose", v(&["decompose"])),
        ("verify", vec!["verify".into(), "--field".into(), p(&field)]),
        (
            "export",
            vec![
                "export".into(),
                "--field".into(),
                p(&field),
                "--format".into(),
                "csv".into(),
            ],
        ),
    ]
}

struct Pass {
    runs: Vec<(&'static str, Run)>,
}

impl Pass {
    fn execute(dir: &Path, tag: &str) -> Pass {
        let root = dir.join(tag);
        let mut runs = Vec::new();
        let field = dir.join("laminate-field.json");
        for (key, args) in invocations(dir) {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let run = solenoid(&root.join(key), &args);
            if key == "laminate" && !field.exists() {
                std::fs::copy(run.dir.join("field.json"), &field).unwrap();
            }
            runs.push((key, run));
        }
        Pass { runs }
    }

    fn get(&self, key: &str) -> &Run {
        &self.runs.iter().find(|(k, _)| *k == key).unwrap().1
    }
}

fn exits_zero(v: &mut Verdict, pass: &Pass, keys: &[&str]) {
    for k in keys {
        let r = pass.get(k);
        v.check(r.code == 0, format!("{k} exit {}", r.code));
    }
}

fn ac1_divergence(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    exits_zero(
        &mut v,
        pass,
        &["laminate", "bi-laminate", "bi-laminate-skew", "staircase", "stitch-2"],
    );
    for k in ["laminate", "bi-laminate", "bi-laminate-skew"] {
        let r = pass.get(k);
        let div = num(&r.report()["check"]["div_residual"]);
        v.check(div <= DIV_TOL, format!("{k} div {div:.1e} in {:.1}s", r.secs));
    }
    for k in ["staircase", "stitch-2"] {
        let r = pass.get(k);
        let div = num(&r.report()["weak_div_bound"]);
        v.check(div <= DIV_TOL, format!("{k} div {div:.1e} in {:.1}s", r.secs));
    }
    v
}

fn ac2_averages(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    for k in ["laminate", "bi-laminate", "bi-laminate-skew"] {
        let err = num(&pass.get(k).report()["check"]["average_error"]);
        v.check(err <= AVERAGE_TOL, format!("{k} {err:.1e}"));
    }
    let skew = pass.get("bi-laminate-skew").report();
    v.check(
        (num(&skew["eta"]) - 0.25).abs() <= 1e-9,
        format!("skew eta {:.6}", num(&skew["eta"])),
    );
    // Absolute bounds; every prescribed average here has norm at least one.
    for k in ["staircase", "stitch-2", "stitch-4", "stitch-8"] {
        let b = num(&pass.get(k).report()["average_bound"]);
        v.check(b <= AVERAGE_TOL, format!("{k} {b:.1e}"));
    }
    let worst = pass
        .get("decompose")
        .report()
        .as_array()
        .unwrap()
        .iter()
        .map(|r| num(&r["reconstruction_error"]))
        .fold(0.0, f64::max);
    v.check(worst <= AVERAGE_TOL, format!("decompose {worst:.1e}"));
    v
}

fn ac3_plane_laminate(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    let run = pass.get("laminate");
    exits_zero(&mut v, pass, &["laminate"]);
    let r = run.report();
    let sup = num(&r["potential_sup"]);
    v.check(sup < POTENTIAL_SUP, format!("sup G {sup:.4}"));
    let bd = num(&r["potential_boundary_max"]);
    v.check(bd <= BOUNDARY_TOL, format!("G on boundary {bd:.1e}"));
    let near = num(&r["near_fraction"]);
    v.check(near >= LAMINATE_NEAR_MIN, format!("near {near:.4}"));
    let w = nums(&r["weights"]);
    let ok = w.len() == 2 && w.iter().all(|x| (x - 0.5).abs() <= WEIGHT_TOL);
    v.check(ok, format!("weights {w:.4?}"));
    let cfg = (num(&r["theta"]), num(&r["delta"]), num(&r["tau"]));
    v.check(cfg == (0.5, 0.1, 0.05), format!("theta/delta/tau {cfg:?}"));
    v.timed("run", run.secs, 10.0);
    v
}

fn ac4_diamonds() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let area = diamond(2, 1.0, 0.5).unwrap().volume();
    v.check((area - 1.0).abs() <= GEOMETRY_TOL, format!("area {area:.15}"));
    for theta in [0.3, 0.5, 0.7] {
        let vol = diamond(3, 1.0, theta).unwrap().volume();
        v.check(
            (vol - 2.0 / 3.0).abs() <= GEOMETRY_TOL,
            format!("vol(theta {theta}) {vol:.15}"),
        );
    }
    v.timed("total", start.elapsed().as_secs_f64(), 1.0);
    v
}

/// Point with `|D| + |B| + |P| ≤ s − 1`, so it satisfies the inner bound.
fn inner_point(rng: &mut ChaCha8Rng) -> Point10 {
    let s = rng.gen_range(1.0..5.0);
    let mut budget = (s - 1.0) * rng.gen::<f64>();
    let mut blocks = [[0.0; 3]; 3];
    for b in blocks.iter_mut() {
        let dir: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let len = budget * rng.gen::<f64>();
        budget -= len;
        let n = norm(&dir);
        if n > 0.0 {
            *b = dir.map(|x| x * len / n);
        }
    }
    Point10::new(blocks[0], blocks[1], blocks[2], s)
}

fn ac5_decompositions() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut atoms, mut defect, mut simplex, mut recon) = (0usize, 0.0f64, 0.0f64, 0.0f64);
    let mut refused = 0;
    for _ in 0..1000 {
        let x = inner_point(&mut rng);
        let Ok(d) = decompose_to_m(&x) else {
            refused += 1;
            continue;
        };
        atoms = atoms.max(d.atoms.len());
        defect = defect.max(d.max_defect());
        let neg = d.weights.iter().fold(0.0f64, |m, &w| m.max(-w));
        simplex = simplex.max((d.weights.iter().sum::<f64>() - 1.0).abs()).max(neg);
        recon = recon.max(d.barycenter().dist(&x));
    }
    v.check(refused == 0, format!("refused {refused}/1000"));
    v.check(atoms <= 8, format!("max atoms {atoms}"));
    v.check(defect <= DEFECT_TOL, format!("max defect {defect:.1e}"));
    v.check(simplex <= SIMPLEX_TOL, format!("simplex error {simplex:.1e}"));
    v.check(recon <= RECONSTRUCTION_TOL, format!("reconstruction {recon:.1e}"));
    let (e1, e2, e3, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0; 3]);
    let s2 = 2f64.sqrt();
    let d = decompose_axis_point(Axis::D, e1, 2.0).unwrap();
    let alpha = d.atoms[0].to_array()[3];
    v.check(alpha == s2 && d.max_defect() == 0.0, format!("alpha {alpha}"));
    let p = decompose_axis_point(Axis::P, e3, 2.0).unwrap();
    let exact = p.atoms[0] == Point10::new(e1, e2, e3, 2.0)
        && p.atoms[1] == Point10::new(e1.map(|x: f64| -x), e2.map(|x: f64| -x), e3, 2.0)
        && p.barycenter() == Point10::new(z, z, e3, 2.0);
    v.check(exact, "P-axis atoms exact".to_string());
    v.timed("total", start.elapsed().as_secs_f64(), 5.0);
    v
}

fn ac6_hulls(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let z = [0.0; 3];
    let inside = check_hull_bounds(&Point10::new(z, z, z, 1.5));
    v.check(
        inside.status == HullStatus::Inside,
        format!("(0,0,0,1.5) {:?}", inside.status),
    );
    let outside = check_hull_bounds(&Point10::new(z, z, [0.0, 0.0, 2.0], 5f64.sqrt()));
    v.check(
        outside.status == HullStatus::Outside && !outside.serre,
        format!("(0,0,2e3,sqrt5) {:?} serre {}", outside.status, outside.serre),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0;
    for _ in 0..10_000 {
        let k = rng.gen_range(1..=6);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let mut acc = [0.0; 10];
        for w in raw {
            let scale = rng.gen_range(0.0..3.0);
            let d: [f64; 3] = std::array::from_fn(|_| scale * rng.gen_range(-1.0..1.0));
            let b: [f64; 3] = std::array::from_fn(|_| scale * rng.gen_range(-1.0..1.0));
            for (a, x) in acc.iter_mut().zip(lift(d, b).to_array()) {
                *a += w / total * x;
            }
        }
        let hb = check_hull_bounds(&Point10::from_array(acc));
        if !(hb.outer && hb.serre) {
            violations += 1;
        }
    }
    v.check(violations == 0, format!("violations {violations}/10000"));
    v.timed("total", start.elapsed().as_secs_f64(), 10.0);
    let rows = pass.get("hull-check").report();
    let statuses: Vec<String> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["bounds"]["status"].to_string())
        .collect();
    v.check(statuses == ["\"Inside\"", "\"Outside\""], format!("cli {statuses:?}"));
    v
}

fn ac7_in_approximation(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    let run = pass.get("in-approx");
    exits_zero(&mut v, pass, &["in-approx"]);
    let r = run.report();
    v.check(
        r["certified"] == true && num(&r["i_max"]) == 4.0,
        format!("certified {} i_max {}", r["certified"], r["i_max"]),
    );
    let deltas = nums(&r["root_deltas"]);
    v.check(
        !deltas.is_empty() && deltas.iter().all(|&d| d <= ROOT_DELTA_MAX),
        format!("root deltas {deltas:.4?}"),
    );
    let margins = nums(&r["root_margins"]);
    v.check(
        !margins.is_empty() && margins.iter().all(|&m| m > 0.0),
        format!("root margins {margins:.4?}"),
    );
    let ia = &r["in_approximation"];
    let radius = num(&ia["radius_bound"]);
    let anchor_max = ia["anchors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let parts = ["d", "b", "p"].iter().flat_map(|k| nums(&a[*k])).chain([num(&a["h"])]);
            parts.map(|x| x * x).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);
    // Every level is a convex combination of anchors, so it stays in this ball.
    v.check(
        anchor_max <= radius,
        format!("R {radius:.4} >= anchors {anchor_max:.4}"),
    );
    for lv in ia["levels"].as_array().unwrap() {
        let i = num(&lv["level"]);
        let (m, nest) = (num(&lv["margin_lb"]), num(&lv["nesting_margin_lb"]));
        v.check(m > 0.0 && nest > 0.0, format!("level {i} margins {m:.1e}/{nest:.1e}"));
        if i >= 2.0 {
            let d = num(&lv["dist_ub"]);
            v.check(d <= 1.0 / i, format!("level {i} dist {d:.3} <= 1/{i}"));
        }
    }
    v.timed("run", run.secs, 30.0);
    v
}

fn ac8_staircase(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    let run = pass.get("staircase");
    exits_zero(&mut v, pass, &["staircase"]);
    let r = run.report();
    v.check(
        num(&r["i_max"]) == 3.0 && num(&r["tau_total"]) == 0.15,
        format!("i_max {} tau {}", r["i_max"], r["tau_total"]),
    );
    let near = num(&r["final_dist_fraction"]);
    v.check(near >= STAIRCASE_NEAR_MIN, format!("dist <= 1/3 on {near:.4}"));
    let levels = r["levels"].as_array().unwrap();
    let incr: Vec<f64> = levels
        .iter()
        .filter(|l| !l["l1_increment"].is_null())
        .map(|l| num(&l["l1_increment"]))
        .collect();
    v.check(
        incr.len() >= 2 && incr.windows(2).all(|w| w[1] < w[0]),
        format!("L1 increments {incr:.4?}"),
    );
    for (k, l) in levels.iter().enumerate() {
        if !l["eps"].is_null() {
            let e = num(&l["eps"]);
            v.check(e < 0.5f64.powi(k as i32 + 1), format!("eps_{} {e}", k + 1));
        }
    }
    let deltas: Vec<f64> = levels.iter().map(|l| num(&l["delta"])).collect();
    let tail: f64 = deltas[1..].iter().sum();
    v.check(
        tail < deltas[0] / 2.0,
        format!("sum delta_i (i>=2) {tail} < {}", deltas[0] / 2.0),
    );
    v.timed("run", run.secs, 600.0);
    v
}

fn ac9_weak_star(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    exits_zero(&mut v, pass, &["stitch-2", "stitch-4", "stitch-8"]);
    let reports: Vec<Value> = ["stitch-2", "stitch-4", "stitch-8"]
        .iter()
        .map(|k| pass.get(k).report())
        .collect();
    for r in &reports {
        let rows = r["rows"].as_array().unwrap();
        let over = rows
            .iter()
            .filter(|row| !(num(&row["residual"]) <= num(&row["bound"])))
            .count();
        v.check(
            over == 0 && !rows.is_empty(),
            format!("j={} {} rows, {over} above bound", r["j"], rows.len()),
        );
    }
    let (r2, r8) = (
        reports[0]["rows"].as_array().unwrap(),
        reports[2]["rows"].as_array().unwrap(),
    );
    let mut worst = 0.0f64;
    for (a, b) in r2.iter().zip(r8) {
        let (ra, rb) = (num(&a["residual"]), num(&b["residual"]));
        let ok = a["name"] == b["name"] && rb <= RATE_RATIO * ra;
        if ra > 0.0 {
            worst = worst.max(rb / ra);
        }
        if !ok {
            v.check(false, format!("{}: j8 {rb:.2e} vs j2 {ra:.2e}", a["name"]));
        }
    }
    v.check(r2.len() == r8.len(), format!("max j8/j2 ratio {worst:.3}"));
    let total: f64 = ["stitch-2", "stitch-4", "stitch-8"]
        .iter()
        .map(|k| pass.get(k).secs)
        .sum();
    v.timed("runs", total, 1800.0);
    v
}

fn ac10_symbol(pass: &Pass) -> Verdict {
    let mut v = Verdict::new();
    exits_zero(&mut v, pass, &["symbol-check"]);
    let r = pass.get("symbol-check").report();
    let (n, fails) = (
        num(&r["constant_rank"]["samples"]),
        r["constant_rank"]["failures"].as_array().map_or(usize::MAX, Vec::len),
    );
    v.check(
        n >= 1000.0 && fails == 0,
        format!("rank 2 on {n} directions, {fails} failures"),
    );
    let (m, res) = (
        num(&r["witness"]["samples"]),
        num(&r["witness"]["max_relative_residual"]),
    );
    v.check(
        m >= 10_000.0 && res <= SYMBOL_TOL,
        format!("witness {res:.1e} over {m} vectors"),
    );
    v
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn ac11_determinism(dir: &Path, first: &Pass) -> Verdict {
    let mut v = Verdict::new();
    let second = Pass::execute(dir, "b");
    for ((key, a), (_, b)) in first.runs.iter().zip(&second.runs) {
        let (fa, fb) = (files_under(&a.dir), files_under(&b.dir));
        let names = |fs: &[PathBuf], root: &Path| {
            fs.iter()
                .map(|f| f.strip_prefix(root).unwrap().to_path_buf())
                .collect::<Vec<_>>()
        };
        let same_names = names(&fa, &a.dir) == names(&fb, &b.dir);
        let same = same_names
            && fa
                .iter()
                .zip(&fb)
                .all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
        if !same || a.code != b.code {
            v.check(false, format!("{key} differs"));
        }
    }
    v.check(true, format!("{} commands rerun", first.runs.len()));
    v
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bi25.json"),
        r#"{"command": "bi-laminate", "theta": 0.25, "tau": 0.5, "delta": 0.4}"#,
    )
    .unwrap();
    let pass = Pass::execute(dir.path(), "a");
    let results = [
        ("AC1", "weak divergence", ac1_divergence(&pass)),
        ("AC2", "exact averages", ac2_averages(&pass)),
        ("AC3", "plane laminate certificate", ac3_plane_laminate(&pass)),
        ("AC4", "diamond geometry", ac4_diamonds()),
        ("AC5", "decompositions onto the manifold", ac5_decompositions()),
        ("AC6", "hull certifiers", ac6_hulls(&pass)),
        ("AC7", "in-approximation", ac7_in_approximation(&pass)),
        ("AC8", "staircase", ac8_staircase(&pass)),
        ("AC9", "weak-star rate", ac9_weak_star(&pass)),
        ("AC10", "symbol checks", ac10_symbol(&pass)),
        ("AC11", "determinism", ac11_determinism(dir.path(), &pass)),
    ];
    for (id, name, v) in &results {
        println!("{id} {}: {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.2.ok).map(|r| r.0).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
