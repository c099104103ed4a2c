//! Serves a baseline over the numeric wire protocol and probes it through
//! the HTTP client, checking the result against in-process probing.
//!
//! cargo run --example numeric_server

use std::sync::Arc;

use dbprobe::backend::baseline::BaselineBackend;
use dbprobe::backend::numeric::{NumericBackend, NumericServer};
use dbprobe::backend::Backend;
use dbprobe::baselines::BaselineSpec;
use dbprobe::probe::probe_examples;
use dbprobe::promptfmt::PromptConfig;
use dbprobe::taskgen::{generate, split_balanced, CoordSpace, TaskSpec};

fn main() -> dbprobe::Result<()> {
    let local: Arc<dyn Backend> = Arc::new(BaselineBackend::new(BaselineSpec::knn()));
    let server = NumericServer::serve_backend(Arc::clone(&local))?;
    println!("serving on {}", server.endpoint());
    let remote = NumericBackend::at("remote-knn", &server.endpoint())?;

    let task = split_balanced(&generate(&TaskSpec::circle(150, 0.5, 0.1, 2))?, 64, 30, 2)?;
    let ctx = task.context_examples(CoordSpace::Raw);
    let a = probe_examples(local.as_ref(), &ctx, &PromptConfig::default(), 25)?;
    let b = probe_examples(&remote, &ctx, &PromptConfig::default(), 25)?;
    println!("maps identical over the wire: {}", a.labels() == b.labels());
    Ok(())
}
