use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use scl_lab::convergence::{convergence, Axis};
use scl_lab::io::out_root;
use scl_lab::run::{simulate_limit, synthesize, verify_identities};
use scl_lab::scenario::{Scenario, IDENTITY_CFG, RETARGET_SMALL_CFG};

fn driven_small() -> Scenario {
    Scenario::parse(RETARGET_SMALL_CFG)
        .unwrap()
        .with("grid.n", "64")
        .unwrap()
        .with("control.source", "constant")
        .unwrap()
        .with("control.eta0", "sin:1:0.2 + cos:2:0.1")
        .unwrap()
        .with("control.eta1", "cos:1:0.1")
        .unwrap()
}

fn run_dir(root: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn identity_scenario_passes_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::parse(IDENTITY_CFG).unwrap();
    let rec = synthesize(&s, tmp.path()).unwrap();
    assert!(rec.pass, "{:?}", rec.checks);
    let terminal = rec.checks.iter().find(|c| c.id == "replay").unwrap();
    assert!(terminal.value <= 1e-8);
    let dir = run_dir(tmp.path());
    for f in ["report.json", "acceptance.json", "controls/eta.csv", "run_log.jsonl", "fields/terminal_rho0.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("identity-"));
}

#[test]
fn retarget_scenario_reaches_its_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::parse(RETARGET_SMALL_CFG).unwrap();
    let rec = synthesize(&s, tmp.path()).unwrap();
    assert!(rec.pass, "{:?}", rec.checks);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir(tmp.path()).join("report.json")).unwrap()).unwrap();
    let syn = &report["synthesis"];
    assert!(syn["success"].as_bool().unwrap());
    assert!(syn["final_error"].as_f64().unwrap() <= 1e-2);
    assert_eq!(syn["stages"].as_array().unwrap().last().unwrap()["n"], 0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let s = driven_small();
    simulate_limit(&s, a.path()).unwrap();
    simulate_limit(&s, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 10);
    assert_eq!(fa, fb);
}

#[test]
fn run_directory_is_content_addressed() {
    let tmp = tempfile::tempdir().unwrap();
    let s = driven_small();
    let r1 = simulate_limit(&s, tmp.path()).unwrap();
    let r2 = simulate_limit(&s.with("solver.outputs", "5").unwrap(), tmp.path()).unwrap();
    assert_ne!(r1.hash, r2.hash);
    assert_eq!(r1.hash.len(), 12);
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 2);
}

#[test]
fn field_and_curve_files_follow_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let s = driven_small().with("solver.outputs", "4").unwrap();
    simulate_limit(&s, tmp.path()).unwrap();
    let dir = run_dir(tmp.path());
    let mut rdr = csv::Reader::from_path(dir.join("fields/terminal_rho0.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["x", "value"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 64);
    let mass: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum::<f64>() * std::f64::consts::TAU / 64.0;
    assert!((mass - std::f64::consts::TAU).abs() < 1e-8);

    let text = std::fs::read_to_string(dir.join("fields/rho0.csv")).unwrap();
    let blocks: Vec<&str> = text.split("# t=").skip(1).collect();
    assert_eq!(blocks.len(), 5);
    for b in &blocks {
        let mut lines = b.split("\r\n");
        lines.next().unwrap().parse::<f64>().unwrap();
        assert_eq!(lines.next(), Some("x,value"));
        assert_eq!(lines.filter(|l| !l.is_empty()).count(), 64);
    }

    let log = std::fs::read_to_string(dir.join("run_log.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["t", "dt", "min_rho0", "norms"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["norms"]["rho0"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn identity_table_and_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::parse(IDENTITY_CFG).unwrap().with("grid.n", "64").unwrap();
    let (rec, table) = verify_identities(&s, tmp.path(), 2, 3).unwrap();
    assert!(rec.pass);
    assert!(table.lines().count() > 20);
    let text = std::fs::read_to_string(run_dir(tmp.path()).join("identities.jsonl")).unwrap();
    let kinds: std::collections::BTreeSet<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.into_iter().collect::<Vec<_>>(), ["adjoint", "bracket", "paired0", "paired1"]);
}

#[test]
fn step_size_study_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let (rec, st) = convergence(&driven_small(), tmp.path(), Axis::Dt, Some(vec![0.08, 0.04, 0.02])).unwrap();
    assert!(rec.pass, "{:?} {:?}", rec.checks, st.rows);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir(tmp.path()).join("convergence.json")).unwrap()).unwrap();
    let row = &json["rows"][0];
    assert_eq!(row["dt"], 0.08);
    assert_eq!(row["metric"], "self_difference");
}

#[test]
fn non_monotone_sweeps_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(convergence(&driven_small(), tmp.path(), Axis::Osc, Some(vec![4.0, 16.0, 8.0])).is_err());
}

#[test]
fn flag_beats_environment_for_the_output_root() {
    assert_eq!(out_root(Some(Path::new("/x"))), PathBuf::from("/x"));
    let bin = env!("CARGO_BIN_EXE_scl");
    let tmp = tempfile::tempdir().unwrap();
    let env_root = tmp.path().join("env");
    let status = Command::new(bin)
        .args(["verify-identities", "--n", "1"])
        .env("SCL_OUT_DIR", &env_root)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(env_root.is_dir());
    let flag_root = tmp.path().join("flag");
    let out = Command::new(bin)
        .args(["verify-identities", "--n", "1", "--out"])
        .arg(&flag_root)
        .env("SCL_OUT_DIR", &env_root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_root.is_dir());
}

#[test]
fn cli_reports_the_missing_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "name = bad\n[spec]\neps = 1e-2\ng0 = \"const:1\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_scl"))
        .args(["synthesize", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spec.T"));
}
