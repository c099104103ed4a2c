//! Entropy-driven active selection against a mock whose confidence follows
//! a logistic-regression oracle, versus random selection.
//!
//! cargo run --release --example active_selection

use dbprobe::active::{run_loop, train_oracle, ActiveConfig, Policy};
use dbprobe::backend::mock::{MockBackend, MockReply};
use dbprobe::promptfmt::PromptConfig;
use dbprobe::taskgen::{generate, scale_default, split_balanced, TaskSpec};

fn main() -> dbprobe::Result<()> {
    let spec = TaskSpec::linear(2, 356, 1.0, 4);
    let task = split_balanced(&scale_default(&generate(&spec)?), 256, 100, 4)?;
    let (oracle, oracle_acc) = train_oracle(&task.spec, 1024, 4)?;
    println!("oracle training accuracy {oracle_acc:.3}");

    let scale = task.scale.expect("scaled task");
    let o = oracle.clone();
    // Noisier than the oracle so the maps differ between steps.
    let backend = MockBackend::new("soft-oracle", move |_, q| {
        let s = o.scores(scale.inverse(q));
        let (a, b) = (s[0] * 0.3, s[1] * 0.3);
        let lse = a.max(b) + (-(a - b).abs()).exp().ln_1p();
        MockReply::TopTokens(vec![("Foo".into(), a - lse), ("Bar".into(), b - lse)])
    });

    for policy in [Policy::Active, Policy::Random] {
        let cfg = ActiveConfig {
            schedule: vec![16, 32, 64],
            grid_g: 25,
            policy,
            ..ActiveConfig::default()
        };
        let traj = run_loop(&backend, &task, &PromptConfig::default(), &cfg, &oracle)?;
        let accs: Vec<String> = traj.accuracies().iter().map(|a| format!("{a:.3}")).collect();
        println!("{policy:?}: sizes {:?} accuracy {}", traj.context_sizes(), accs.join(" "));
    }
    Ok(())
}
