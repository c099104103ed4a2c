//! Shows the exact text a completion backend receives for one query.
//!
//! cargo run --example render_prompt

use dbprobe::promptfmt::{order_context, parse_prompt, render_prompt, PromptConfig};
use dbprobe::taskgen::{generate, scale_default, split_balanced, CoordSpace, TaskSpec};

fn main() -> dbprobe::Result<()> {
    let task = generate(&TaskSpec::moon(40, 0.1, 3))?;
    let task = split_balanced(&scale_default(&task), 6, 4, 3)?;
    let cfg = PromptConfig::new(["Foo", "Bar"]).with_ordering_seed(Some(1));
    let ctx = order_context(&task.context_examples(CoordSpace::Prompt), &cfg);
    let prompt = render_prompt(&ctx, [50.0, 50.0], &cfg)?;
    println!("{prompt}");

    // The format is invertible.
    let (parsed, query) = parse_prompt(&prompt, &cfg)?;
    assert_eq!(parsed, ctx);
    assert_eq!(query, [50.0, 50.0]);
    Ok(())
}
