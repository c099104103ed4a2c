//! Metrics on hand-built maps: a half split, a checkerboard and their
//! disagreement, plus an accuracy curve from made-up observations.
//!
//! cargo run --example map_metrics

use dbprobe::metrics::{accuracy_curve, curve_csv, disagreement, fragmentation, region_count};
use dbprobe::probe::{DecisionMap, GridSpec};

fn map(g: usize, f: impl Fn(usize, usize) -> usize) -> dbprobe::Result<DecisionMap> {
    let grid = GridSpec::new([0.0, 0.0], [1.0, 1.0], g)?;
    let labels = (0..g * g).map(|idx| Some(f(idx % g, idx / g))).collect();
    DecisionMap::from_labels(grid, 2, labels)
}

fn main() -> dbprobe::Result<()> {
    let half = map(20, |i, _| usize::from(i >= 10))?;
    let checker = map(20, |i, j| (i + j) % 2)?;
    for (name, m) in [("half", &half), ("checker", &checker)] {
        println!("{name:<8} fragmentation {:.4}  regions {}", fragmentation(m), region_count(m));
    }
    println!("disagreement(half, checker) = {:.3}", disagreement(&half, &checker)?);

    let obs = [(8, 0.70), (8, 0.74), (16, 0.80), (16, 0.84), (32, 0.90), (32, 0.91)];
    print!("{}", curve_csv(&accuracy_curve(&obs)));
    Ok(())
}
