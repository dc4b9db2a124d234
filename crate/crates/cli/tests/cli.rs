use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_solenoid"));
    c.env_remove("SOLENOID_LOG");
    c
}

fn run(args: &[&str]) -> i32 {
    let out = bin().args(args).output().expect("spawn solenoid");
    out.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn malformed_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{");
    let unknown = write(dir.path(), "unknown.json", r#"{"bogus": 1}"#);
    let wrong_cmd = write(dir.path(), "cmd.json", r#"{"command": "staircase"}"#);
    let out = dir.path().join("out");
    for cfg in [&bad, &unknown, &wrong_cmd] {
        assert_eq!(run(&["laminate", "--config", s(cfg), "--out", s(&out)]), 1, "{cfg:?}");
    }
    assert_eq!(run(&["laminate", "--tau", "2", "--out", s(&out)]), 1);
    assert_eq!(run(&["no-such-command"]), 1);
    assert_eq!(
        run(&[
            "verify",
            "--field",
            s(&dir.path().join("missing.json")),
            "--out",
            s(&out)
        ]),
        1
    );
}

#[test]
fn hull_check_reports_verdicts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hull");
    assert_eq!(run(&["hull-check", "--out", s(&out)]), 0);
    let r = read_json(&out.join("report.json"));
    assert_eq!(r["command"], "hull-check");
    let rows = r["report"].as_array().unwrap();
    assert_eq!(rows[0]["bounds"]["status"], "Inside");
    assert_eq!(rows[1]["bounds"]["status"], "Outside");
    assert_eq!(rows[1]["bounds"]["serre"], false);
}

#[test]
fn certificate_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let strict = write(
        dir.path(),
        "strict.json",
        r#"{"tolerances": {"div": 0.0, "average": 0.0, "symbol": 0.0}}"#,
    );
    let out = dir.path().join("strict");
    let code = run(&["laminate", "--config", s(&strict), "--out", s(&out)]);
    let r = read_json(&out.join("report.json"));
    assert_eq!(code, 2);
    assert_eq!(r["passed"], false);
    assert!(!r["failures"].as_array().unwrap().is_empty());
    let outside = write(
        dir.path(),
        "outside.json",
        r#"{"points": [[1, 1, 0, 1, 0, 0, 0, 0, 0, 2.5]]}"#,
    );
    let out = dir.path().join("dec");
    assert_eq!(run(&["decompose", "--config", s(&outside), "--out", s(&out)]), 2);
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "lam.json",
        r#"{"command": "laminate", "tau": 0.2, "delta": 0.2}"#,
    );
    let out = dir.path().join("lam");
    assert_eq!(
        run(&["laminate", "--config", s(&cfg), "--tau", "0.1", "--out", s(&out)]),
        0
    );
    let r = read_json(&out.join("report.json"));
    assert_eq!(r["report"]["tau"], 0.1);
    assert_eq!(r["report"]["delta"], 0.2);
    assert_eq!(r["config"]["tau"], 0.1);
    assert!(r["config"].get("out").is_none());
}

#[test]
fn field_descriptor_round_trips_through_verify_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let lam = dir.path().join("lam");
    assert_eq!(run(&["laminate", "--out", s(&lam)]), 0);
    let field = lam.join("field.json");
    let ver = dir.path().join("ver");
    assert_eq!(run(&["verify", "--field", s(&field), "--out", s(&ver)]), 0);
    let original = read_json(&lam.join("report.json"));
    let verified = read_json(&ver.join("report.json"));
    assert_eq!(original["report"]["check"], verified["report"]["check"]);
    let exp = dir.path().join("exp");
    assert_eq!(
        run(&["export", "--field", s(&field), "--format", "json", "--out", s(&exp)]),
        0
    );
    assert_eq!(read_json(&exp.join("export.json")), read_json(&field));
}

#[test]
fn csv_export_of_a_constant_field() {
    let dir = tempfile::tempdir().unwrap();
    let desc = r#"{"version": "solenoid-field/1",
        "field": {"type": "piecewise-constant", "m": 1, "n": 2, "free": 0,
                  "domain": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
                  "outlines": [], "pieces": [], "background": [0.25, -1.5], "target_average": [0.25, -1.5]},
        "provenance": {"command": "laminate", "config_hash": "0", "seed": 0}}"#;
    let field = write(dir.path(), "const.json", desc);
    let ver = dir.path().join("ver");
    assert_eq!(run(&["verify", "--field", s(&field), "--out", s(&ver)]), 0);
    let out = dir.path().join("csv");
    assert_eq!(
        run(&[
            "export",
            "--field",
            s(&field),
            "--format",
            "csv",
            "--grid-h",
            "0.25",
            "--out",
            s(&out)
        ]),
        0
    );
    let text = std::fs::read_to_string(out.join("export.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,cell,comp_1,comp_2");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 16);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(&f[3..], &["0.25", "-1.5"]);
    }
    let vtk = dir.path().join("vtk");
    assert_eq!(
        run(&[
            "export",
            "--field",
            s(&field),
            "--format",
            "vtk",
            "--grid-h",
            "0.25",
            "--out",
            s(&vtk)
        ]),
        0
    );
    let text = std::fs::read_to_string(vtk.join("export.vtk")).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0"));
    assert!(text.contains("DIMENSIONS 4 4 1"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["laminate", "hull-check", "decompose", "symbol-check"] {
        let a = dir.path().join(format!("{cmd}-a"));
        let b = dir.path().join(format!("{cmd}-b"));
        assert_eq!(run(&[cmd, "--seed", "3", "--out", s(&a)]), 0);
        assert_eq!(run(&[cmd, "--seed", "3", "--out", s(&b)]), 0);
        for name in ["report.json", "field.json"] {
            let (pa, pb) = (a.join(name), b.join(name));
            if pa.exists() {
                assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap(), "{cmd}/{name}");
            }
        }
    }
}

#[test]
fn seed_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["symbol-check", "--seed", "1", "--out", s(&a)]), 0);
    assert_eq!(run(&["symbol-check", "--seed", "2", "--out", s(&b)]), 0);
    let (ra, rb) = (read_json(&a.join("report.json")), read_json(&b.join("report.json")));
    assert_ne!(ra["config_hash"], rb["config_hash"]);
    assert_eq!(ra["seed"], 1);
}
