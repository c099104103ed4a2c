//! Draws one task of each kind, scales it into prompt space and splits it.
//!
//! cargo run --example generate_tasks

use dbprobe::taskgen::{generate, scale_default, split_balanced, CoordSpace, Regime, TaskKind, TaskSpec};

fn main() -> dbprobe::Result<()> {
    for kind in TaskKind::ALL {
        let spec = TaskSpec::draw(kind, 2, 200, Regime::Train, 7);
        let task = split_balanced(&scale_default(&generate(&spec)?), 32, 40, spec.seed)?;
        let ctx = task.context_examples(CoordSpace::Prompt);
        let ones = ctx.iter().filter(|e| e.y == 1).count();
        println!(
            "{:<7} {} points, context {} ({} of class 1), test {}",
            kind.name(),
            task.points.len(),
            ctx.len(),
            ones,
            task.test_examples(CoordSpace::Prompt).len()
        );
        for e in ctx.iter().take(3) {
            println!("    x = [{:.0}, {:.0}]  y = {}", e.x[0], e.x[1], e.y);
        }
    }
    Ok(())
}
