//! Talks to a text-completion endpoint. Without an argument it starts a
//! local stand-in that always answers " Bar"; with a URL it probes that
//! server instead (set OPENAI_API_KEY if it needs one).
//!
//! cargo run --example completion_client [URL] [MODEL]

use dbprobe::backend::completion::CompletionBackend;
use dbprobe::backend::{BackendDescriptor, BackendKind};
use dbprobe::probe::probe_examples;
use dbprobe::promptfmt::PromptConfig;
use dbprobe::taskgen::{generate, scale_default, split_balanced, CoordSpace, TaskSpec};

fn stand_in() -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind");
    let endpoint = format!("http://{}", server.server_addr().to_ip().expect("ip"));
    std::thread::spawn(move || {
        let reply = r#"{"choices":[{"text":" Bar","logprobs":{"top_logprobs":[{" Bar":-0.3," Foo":-1.4}]}}]}"#;
        for request in server.incoming_requests() {
            let _ = request.respond(tiny_http::Response::from_string(reply));
        }
    });
    endpoint
}

fn main() -> dbprobe::Result<()> {
    let mut args = std::env::args().skip(1);
    let endpoint = args.next().unwrap_or_else(stand_in);
    let mut d = BackendDescriptor::new("completion", BackendKind::Completion);
    d.endpoint = Some(endpoint.clone());
    d.model_name = args.next().unwrap_or_else(|| "stand-in".into());
    let backend = CompletionBackend::new(d)?;

    let task = split_balanced(&scale_default(&generate(&TaskSpec::linear(2, 60, 2.0, 0))?), 16, 10, 0)?;
    let map = probe_examples(&backend, &task.context_examples(CoordSpace::Prompt), &PromptConfig::default(), 5)?;
    let bars = map.cells.iter().filter(|c| c.label == Some(1)).count();
    println!("{endpoint}: {bars}/{} cells answered Bar, {} abstained", map.cells.len(), map.abstain_count());
    Ok(())
}
