//! Fits every classical baseline on one moon task and compares test
//! accuracy and map smoothness.
//!
//! cargo run --release --example baselines

use dbprobe::backend::baseline::BaselineBackend;
use dbprobe::backend::ProbeContext;
use dbprobe::baselines::BaselineSpec;
use dbprobe::metrics::{fragmentation, region_count, test_accuracy};
use dbprobe::probe::probe_examples;
use dbprobe::promptfmt::{make_label_map, PromptConfig};
use dbprobe::taskgen::{generate, split_balanced, CoordSpace, TaskSpec};

fn main() -> dbprobe::Result<()> {
    let task = generate(&TaskSpec::moon(228, 0.15, 0))?;
    let task = split_balanced(&task, 128, 100, 0)?;
    let ctx = task.context_examples(CoordSpace::Raw);
    let prompt = PromptConfig::default();
    let labels = make_label_map(&prompt)?;

    let specs = [
        BaselineSpec::logreg(),
        BaselineSpec::knn(),
        BaselineSpec::dtree(),
        BaselineSpec::Mlp {
            hidden: vec![64, 64],
            max_iter: 500,
            lr: 1e-2,
            seed: 0,
        },
        BaselineSpec::svm_rbf(),
        BaselineSpec::svm_poly(),
    ];
    println!("{:<10} {:>8} {:>8} {:>8}", "model", "acc", "frag", "regions");
    for spec in specs {
        let name = spec.name();
        let backend = BaselineBackend::new(spec);
        let map = probe_examples(&backend, &ctx, &prompt, 50)?;
        let pctx = ProbeContext::new(&ctx, &prompt, &labels)?;
        let acc = test_accuracy(&backend, &pctx, &task.test_examples(CoordSpace::Raw))?;
        println!("{name:<10} {acc:>8.3} {:>8.4} {:>8}", fragmentation(&map), region_count(&map));
    }
    Ok(())
}
