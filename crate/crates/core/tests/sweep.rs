//! End-to-end sweeps from TOML configs.

use std::io::Write;

use dbprobe::experiment::report::write_report;
use dbprobe::experiment::runner::{latest_records, read_ledger, RunStatus, LEDGER_FILE};
use dbprobe::experiment::{exit_code, run, ExperimentConfig};

fn config(dir: &std::path::Path, body: &str) -> ExperimentConfig {
    let text = format!("outputs = \"{}\"\n{body}", dir.display());
    ExperimentConfig::parse(&text, false).unwrap()
}

const PRODUCT: &str = r#"
name = "product"
n_context = [8, 16, 32, 64, 128, 256]
n_test = 50
grid_g = 10

[[tasks]]
kind = "linear"
seeds = [0, 1, 2, 3, 4]

[[tasks]]
kind = "circle"
seeds = [0, 1, 2, 3, 4]

[[tasks]]
kind = "moon"
seeds = [0, 1, 2, 3, 4]

[[backends]]
name = "knn"
kind = "baseline"
params = { kind = "knn", k = 5 }
"#;

#[test]
fn full_product_gives_one_record_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), PRODUCT);
    let summary = run(&cfg).unwrap();
    assert_eq!(summary.records.len(), 3 * 5 * 6);
    assert_eq!(summary.executed, 90);
    assert!(summary.records.iter().all(|r| r.status == RunStatus::Ok));
    let ids: std::collections::HashSet<_> = summary.records.iter().map(|r| &r.run_id).collect();
    assert_eq!(ids.len(), 90);
    assert_eq!(read_ledger(dir.path().join(LEDGER_FILE)).unwrap().len(), 90);

    let report = std::fs::read_to_string(write_report(dir.path()).unwrap()).unwrap();
    for kind in ["linear", "circle", "moon"] {
        assert!(dir.path().join(format!("figures/curves_{kind}.svg")).exists());
        assert!(report.contains(&format!("figures/curves_{kind}.svg")));
    }
}

const SMALL: &str = r#"
name = "resume"
n_context = [8, 16, 32]
n_test = 20
grid_g = 8

[[tasks]]
kind = "moon"
seeds = [0, 1]

[[backends]]
name = "centroid"
kind = "mock"
params = { script = "nearest_centroid" }
"#;

#[test]
fn interrupted_sweep_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let full = config(dir.path(), SMALL);
    assert_eq!(run(&full).unwrap().executed, 6);

    // Keep two finished records, then simulate a crash halfway through the third.
    let path = dir.path().join(LEDGER_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut ledger = std::fs::File::create(&path).unwrap();
    writeln!(ledger, "{}\n{}", lines[0], lines[1]).unwrap();
    ledger.write_all(&lines[2].as_bytes()[..40]).unwrap();
    drop(ledger);

    let resumed = run(&full).unwrap();
    assert_eq!(resumed.skipped, 2);
    assert_eq!(resumed.executed, 4);
    let again = run(&full).unwrap();
    assert_eq!((again.executed, again.skipped), (0, 6));
    assert_eq!(latest_records(&read_ledger(dir.path().join(LEDGER_FILE)).unwrap()).len(), 6);
}

#[test]
fn unreachable_backend_fails_its_runs_only() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SMALL}\n[[backends]]\nname = \"down\"\nkind = \"numeric\"\nendpoint = \"http://127.0.0.1:9\"\nretry = {{ max_attempts = 1, backoff_secs = 0.0 }}\n"
    );
    let summary = run(&config(dir.path(), &body)).unwrap();
    assert_eq!(summary.records.len(), 12);
    let (down, up): (Vec<_>, Vec<_>) = summary.records.iter().partition(|r| r.backend.name == "down");
    assert!(down.iter().all(|r| r.status == RunStatus::Failed && r.map_file.is_none()));
    assert!(up.iter().all(|r| r.status == RunStatus::Ok));
    assert!(summary.any_unavailable());
}

#[test]
fn environment_variables_fill_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("DBPROBE_SWEEP_TEST_SEED", "7");
    let body = SMALL.replace("seeds = [0, 1]", "seeds = [${DBPROBE_SWEEP_TEST_SEED}]");
    let cfg = config(dir.path(), &body);
    assert_eq!(cfg.tasks[0].seeds, vec![7]);

    let err = ExperimentConfig::parse("name = \"${DBPROBE_SWEEP_TEST_UNSET}\"", false).unwrap_err();
    assert_eq!(exit_code(&err), 2);
}
