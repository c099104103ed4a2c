//! The `dbprobe` binary: verbs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn dbprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbprobe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn probe_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let o = dbprobe(
        &["probe", "--backend", "baseline:knn", "--n-context", "32", "--grid", "12", "--out", "p"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["accuracy"].as_f64().unwrap() > 0.8);
    assert!(dir.path().join("p/map.map").exists());

    let o = dbprobe(&["render", "--map", "p/map.map", "--out", "r"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unreachable = dbprobe(
        &["probe", "--backend", "numeric:http://127.0.0.1:9", "--n-context", "8", "--grid", "4", "--out", "u"],
        dir.path(),
    );
    assert_eq!(code(&unreachable), 3);

    let bad_backend = dbprobe(&["probe", "--backend", "telepathy:yes", "--out", "b"], dir.path());
    assert_eq!(code(&bad_backend), 2);

    let no_ledger = dbprobe(&["report", "--runs", "nowhere"], dir.path());
    assert_ne!(code(&no_ledger), 0);
}

#[test]
fn sweep_is_resumable_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        r#"
name = "cli"
n_context = [8, 16]
n_test = 20
grid_g = 6
outputs = "runs"

[[tasks]]
kind = "circle"
seeds = [0, 1]

[[backends]]
name = "centroid"
kind = "mock"
params = { script = "nearest_centroid" }
"#,
    )
    .unwrap();
    let first = dbprobe(&["sweep", "--config", "exp.toml"], dir.path());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let ledger = std::fs::read_to_string(dir.path().join("runs/ledger.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 4);
    let second = dbprobe(&["sweep", "--config", "exp.toml"], dir.path());
    assert_eq!(code(&second), 0);
    let ledger = std::fs::read_to_string(dir.path().join("runs/ledger.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 4);

    let report = dbprobe(&["report", "--runs", "runs"], dir.path());
    assert_eq!(code(&report), 0, "{}", String::from_utf8_lossy(&report.stderr));
    assert!(dir.path().join("runs/report.md").exists());
}
