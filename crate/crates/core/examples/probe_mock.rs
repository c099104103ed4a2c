//! Probes a scripted mock over a 30x30 grid and prints the map as text.
//!
//! cargo run --example probe_mock

use dbprobe::backend::mock::{MockBackend, MockScript};
use dbprobe::backend::{BackendDescriptor, BackendKind};
use dbprobe::metrics::{fragmentation, region_count};
use dbprobe::probe::probe_examples;
use dbprobe::promptfmt::PromptConfig;
use dbprobe::taskgen::{generate, scale_default, split_balanced, CoordSpace, TaskSpec};

fn main() -> dbprobe::Result<()> {
    let task = generate(&TaskSpec::circle(200, 0.5, 0.05, 1))?;
    let task = split_balanced(&scale_default(&task), 64, 50, 1)?;

    let mut d = BackendDescriptor::new("centroid", BackendKind::Mock);
    d.params = serde_json::to_value(MockScript::NearestCentroid { temperature: 100.0 })?;
    let backend = MockBackend::from_descriptor(d)?;

    let map = probe_examples(&backend, &task.context_examples(CoordSpace::Prompt), &PromptConfig::default(), 30)?;
    for j in (0..map.g()).rev() {
        let row: String = (0..map.g())
            .map(|i| match map.label(i, j) {
                Some(0) => '.',
                Some(_) => '#',
                None => '?',
            })
            .collect();
        println!("{row}");
    }
    println!(
        "{} calls, fragmentation {:.4}, {} regions",
        backend.calls(),
        fragmentation(&map),
        region_count(&map)
    );
    Ok(())
}
