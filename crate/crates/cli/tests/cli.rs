use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fluidnet(input: &Path, command: &str, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluidnet"))
        .args(["--input", input.to_str().unwrap(), "--command", command, "--out", out.to_str().unwrap()])
        .args(extra)
        .env("FLUIDNET_THREADS", "1")
        .output()
        .unwrap()
}

fn spec_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const SINGLE_QUEUE: &str = "alpha = [0.0]\nmu = [1.0]\nconstituency = [[1]]\n\n[run]\ninitial = [1.0]\n";

const LU_KUMAR: &str = r#"
alpha = [1.0, 0.0, 0.0, 0.0]
mu = [10.0, 1.6666666666666667, 10.0, 1.6666666666666667]
routing = [[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 0]]
constituency = [[1, 0, 0, 1], [0, 1, 1, 0]]
discipline = "priority"
priority_order = [4, 2, 1, 3]
"#;

#[test]
fn stable_queue_reports_tau_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(dir.path(), "q.toml", SINGLE_QUEUE);
    let out = dir.path().join("out");
    let o = fluidnet(&input, "stability", &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["verdict"]["status"], "stable");
    assert!((r["verdict"]["tau"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(r["verdict"]["certified"], true);
    assert!(!out.join("witness.csv").exists());
}

#[test]
fn lu_kumar_exits_unstable_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(dir.path(), "lk.toml", LU_KUMAR);
    let out = dir.path().join("out");
    let o = fluidnet(&input, "stability", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report(&out)["verdict"]["status"], "unstable");
    let csv = std::fs::read_to_string(out.join("witness.csv")).unwrap();
    assert!(csv.starts_with("t,Q1,Q2,Q3,Q4"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn malformed_spec_exits_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(dir.path(), "bad.toml", "alpha = [0.5]\nmu = [1.0\n");
    let o = fluidnet(&input, "simulate", &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("parse error at line"), "{err}");

    let input = spec_file(dir.path(), "unknown.toml", "alpha = [0.5]\nmu = [1.0]\nspeed = 2\n");
    let o = fluidnet(&input, "simulate", &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("speed"), "{err}");
}

#[test]
fn bad_overrides_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(dir.path(), "q.toml", SINGLE_QUEUE);
    let o = fluidnet(&input, "simulate", &dir.path().join("out"), &["--step", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fluidnet(&input, "skorokhod", &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[skorokhod]"));
}

#[test]
fn simulate_writes_trajectory_and_logs_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(dir.path(), "q.toml", SINGLE_QUEUE);
    let out = dir.path().join("out");
    let o = fluidnet(&input, "simulate", &out, &["--step", "0.1", "--horizon", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let log = String::from_utf8_lossy(&o.stderr);
    assert!(log.contains("seed=42 step=0.1 horizon=4"), "{log}");
    let r = report(&out);
    assert_eq!(r["parameters"]["seed"], 42);
    assert!((r["drained_at"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,Q1,T1,u1\n"), "{csv}");
    // no stray temporary files are left behind
    let names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn skorokhod_refuses_non_completely_s() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(
        dir.path(),
        "lsp.toml",
        "[skorokhod]\ntheta = [-1.0, -1.0]\nreflection = [[1.0, 0.0], [0.0, -1.0]]\nz0 = [1.0, 1.0]\n",
    );
    let o = fluidnet(&input, "skorokhod", &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("completely-S"));

    let input = spec_file(dir.path(), "ok.toml", "[skorokhod]\ntheta = [-1.0]\nreflection = [[1.0]]\nz0 = [1.0]\n");
    let out = dir.path().join("ok");
    let o = fluidnet(&input, "skorokhod", &out, &["--horizon", "3", "--step", "0.01"]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&out);
    assert!(r["residual"].as_f64().unwrap() < 1e-9);
    assert!(r["complementarity"].as_f64().unwrap() <= 1e-6 * 3.0);
    let csv = std::fs::read_to_string(out.join("lsp.csv")).unwrap();
    assert!(csv.starts_with("t,Z1,Y1\n"));
}

#[test]
fn explicit_family_check() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(dir.path(), "lsc.toml", "[gfn]\nfamily = \"lsc_counterexample\"\n");
    let out = dir.path().join("out");
    assert_eq!(fluidnet(&input, "gfn-check", &out, &[]).status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["value_at_diagonal"], 2.0);
    assert_eq!(r["sequence"][0]["value"], 2.0);

    let input = spec_file(dir.path(), "cc.toml", "[gfn]\nfamily = \"concat_counterexample\"\n");
    let out = dir.path().join("cc");
    assert_eq!(fluidnet(&input, "gfn-check", &out, &[]).status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["concatenation"]["members"], 0);
    assert!(r["concatenation"]["candidates"].as_u64().unwrap() > 0);
}

#[test]
fn fluidlimit_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let input = spec_file(
        dir.path(),
        "fl.toml",
        "alpha = [0.0]\nmu = [1.0]\nconstituency = [[1]]\n[fluidlimit]\ndirection = [1.0]\nscales = [10, 100]\nreplications = 2\nservice = \"deterministic\"\n",
    );
    let out = dir.path().join("out");
    assert_eq!(fluidnet(&input, "fluidlimit", &out, &["--horizon", "2"]).status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("distance.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("r,seed,mean_dist,max_dist"));
    assert_eq!(lines.count(), 4);
    assert!(out.join("sample_path.csv").exists());
}
