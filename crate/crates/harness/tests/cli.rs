use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wfsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfsched")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

fn gen_synthetic(dir: &Path) -> PathBuf {
    let out = dir.join("inst");
    let o = wfsched(&["gen", "--suite", "synthetic", "--out", out.to_str().unwrap(), "--batch", "16", "--depth", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<PathBuf> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    files[0].clone()
}

/// Every column except the run id and the ablation label.
fn metric_columns(csv: &str) -> Vec<String> {
    let row = csv.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    cols.iter().enumerate().filter(|(i, _)| *i != 0 && *i != 17).map(|(_, c)| c.to_string()).collect()
}

#[test]
fn horizon_one_equals_the_future_planning_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_synthetic(dir.path());
    let inst = inst.to_str().unwrap();
    let h1 = wfsched(&["run", "--instance", inst, "--policy", "fate", "--h", "1"]);
    let ab = wfsched(&["run", "--instance", inst, "--policy", "fate", "--ablate", "no_future_planning"]);
    assert!(h1.status.success() && ab.status.success(), "{}{}", stderr(&h1), stderr(&ab));
    let (h1, ab) = (stdout(&h1), stdout(&ab));
    assert!(h1.lines().nth(1).unwrap().starts_with("run:fate:h=1:"));
    assert!(ab.lines().nth(1).unwrap().starts_with("run:fate:no_future_planning:"));
    assert_eq!(metric_columns(&h1), metric_columns(&ab));
    let full = stdout(&wfsched(&["run", "--instance", inst, "--policy", "fate"]));
    assert!(full.lines().nth(1).unwrap().ends_with(",none,default,4"));
}

#[test]
fn round_robin_runs_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_synthetic(dir.path());
    let a = wfsched(&["run", "--instance", inst.to_str().unwrap(), "--policy", "roundrobin"]);
    let b = wfsched(&["run", "--instance", inst.to_str().unwrap(), "--policy", "roundrobin"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 2);
}

#[test]
fn run_writes_trace_and_honours_weights() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_synthetic(dir.path());
    let trace = dir.path().join("t.jsonl");
    let out = dir.path().join("row.csv");
    let o = wfsched(&[
        "run",
        "--instance",
        inst.to_str().unwrap(),
        "--policy",
        "fate",
        "--switch-x",
        "2",
        "--weight",
        "gamma=0.7",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = std::fs::read_to_string(&out).unwrap();
    assert!(row.lines().nth(1).unwrap().contains(",switch_x=2,"));
    let t = std::fs::read_to_string(&trace).unwrap();
    assert!(t.lines().count() > 0);
    for line in t.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    let bad = wfsched(&["run", "--instance", inst.to_str().unwrap(), "--policy", "fate", "--weight", "nonsense=1"]);
    assert!(!bad.status.success());
    let bad = wfsched(&["run", "--instance", inst.to_str().unwrap(), "--policy", "fate", "--ablate", "no_magic"]);
    assert!(!bad.status.success());
    let bad = wfsched(&["run", "--instance", inst.to_str().unwrap(), "--policy", "nope"]);
    assert!(stderr(&bad).contains("unknown policy"));
}

#[test]
fn unknown_flags_are_rejected_with_usage() {
    let o = wfsched(&["run", "--policy", "fate", "--bogus"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = wfsched(&["frobnicate"]);
    assert!(!o.status.success());
}

#[test]
fn export_without_a_run_reports_the_missing_csv() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.toml");
    std::fs::write(
        &m,
        r#"schema_version = 1
name = "t"
output_dir = "out"
methods = ["round_robin", "fate"]
batch_sizes = [16]
[[experiments]]
name = "x"
kind = "main"
workloads = [{ kind = "synthetic", depth = 3, width = 2, density = 0.5 }]
"#,
    )
    .unwrap();
    let o = wfsched(&["export", m.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("declared CSV not found"), "{}", stderr(&o));
    let o = wfsched(&["manifest", m.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = wfsched(&["export", m.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("table1_overall.csv"));
}

#[test]
fn manifest_validation_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.toml");
    std::fs::write(
        &m,
        r#"schema_version = 1
name = "t"
output_dir = "out"
methods = ["fate", "heft"]
[[experiments]]
name = "x"
kind = "main"
workloads = [{ kind = "synthetic", depth = 3, width = 2, density = 0.5 }]
"#,
    )
    .unwrap();
    let o = wfsched(&["manifest", m.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("round_robin"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn verify_passes() {
    let o = wfsched(&["verify", "--problems", "50"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}
