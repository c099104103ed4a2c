//! Runs a small config-driven sweep twice (the second time entirely from the
//! ledger) and writes the markdown report with accuracy curves.
//!
//! cargo run --release --example sweep_and_report [OUT_DIR]

use dbprobe::experiment::report::write_report;
use dbprobe::experiment::{run, ExperimentConfig};

const CONFIG: &str = r#"
name = "example"
n_context = [8, 16, 32, 64]
n_test = 50
grid_g = 20

[[tasks]]
kind = "moon"
seeds = [0, 1, 2]

[[tasks]]
kind = "circle"
seeds = [0, 1, 2]

[[backends]]
name = "knn"
kind = "baseline"
params = { kind = "knn", k = 5 }

[[backends]]
name = "centroid"
kind = "mock"
params = { script = "nearest_centroid" }

[[prompt_variants]]
labels = ["Foo", "Bar"]

[[prompt_variants]]
labels = ["Bar", "Foo"]
"#;

fn main() -> dbprobe::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-sweep".into());
    let mut cfg = ExperimentConfig::parse(CONFIG, false)?;
    cfg.outputs = out.into();
    cfg.validate()?;

    let first = run(&cfg)?;
    println!("first pass: {} executed, {} from the ledger", first.executed, first.skipped);
    let second = run(&cfg)?;
    println!("second pass: {} executed, {} from the ledger", second.executed, second.skipped);

    let report = write_report(&cfg.outputs)?;
    println!("report: {}", report.display());
    Ok(())
}
