//! Backends over real sockets: a fake completion server, the numeric
//! protocol and the persistent cache.

use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use dbprobe::backend::baseline::BaselineBackend;
use dbprobe::backend::cache::CachedBackend;
use dbprobe::backend::completion::CompletionBackend;
use dbprobe::backend::mock::{MockBackend, MockScript};
use dbprobe::backend::numeric::{NumericBackend, NumericServer};
use dbprobe::backend::{Backend, BackendDescriptor, BackendError, BackendKind, Mode, RetryPolicy};
use dbprobe::baselines::BaselineSpec;
use dbprobe::probe::probe_examples;
use dbprobe::promptfmt::PromptConfig;
use dbprobe::taskgen::{generate, scale_default, split_balanced, CoordSpace, TaskSpec};
use dbprobe::Error;
use serde_json::{json, Value};

/// Serves canned `(status, body)` replies in order, repeating the last one,
/// and records every request body.
struct FakeServer {
    server: Arc<tiny_http::Server>,
    worker: Option<JoinHandle<()>>,
    seen: Arc<Mutex<Vec<Value>>>,
}

impl FakeServer {
    fn start(replies: Vec<(u16, Value)>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (Arc::clone(&server), Arc::clone(&seen));
        let worker = std::thread::spawn(move || {
            for (n, mut request) in srv.incoming_requests().enumerate() {
                let mut body = String::new();
                request.as_reader().read_to_string(&mut body).unwrap();
                log.lock().unwrap().push(serde_json::from_str(&body).unwrap_or(Value::Null));
                let (status, reply) = &replies[n.min(replies.len() - 1)];
                let response = tiny_http::Response::from_string(reply.to_string()).with_status_code(*status);
                let _ = request.respond(response);
            }
        });
        FakeServer {
            server,
            worker: Some(worker),
            seen,
        }
    }

    fn endpoint(&self) -> String {
        format!("http://{}", self.server.server_addr().to_ip().unwrap())
    }

    fn requests(&self) -> Vec<Value> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn completion(endpoint: &str, mode: Mode, attempts: u32) -> CompletionBackend {
    let mut d = BackendDescriptor::new("fake", BackendKind::Completion);
    d.endpoint = Some(endpoint.to_string());
    d.model_name = "tiny".into();
    d.mode = mode;
    d.retry = RetryPolicy {
        max_attempts: attempts,
        backoff_secs: 0.01,
    };
    d.api_key_env = Some("DBPROBE_TEST_UNSET_KEY".into());
    CompletionBackend::new(d).unwrap()
}

fn small_task() -> dbprobe::taskgen::TaskInstance {
    let task = generate(&TaskSpec::linear(2, 40, 2.0, 3)).unwrap();
    split_balanced(&scale_default(&task), 16, 8, 3).unwrap()
}

#[test]
fn completion_retries_transient_errors() {
    let ok = json!({"choices": [{"text": " Bar", "logprobs": {"top_logprobs": [{" Bar": -0.2, " Foo": -1.9}]}}]});
    let fake = FakeServer::start(vec![(503, json!({})), (429, json!({})), (200, ok)]);
    let backend = completion(&fake.endpoint(), Mode::Logprob, 3);
    let task = small_task();
    let map = probe_examples(&backend, &task.context_examples(CoordSpace::Prompt), &PromptConfig::default(), 2).unwrap();
    assert!(map.cells.iter().all(|c| c.label == Some(1)));

    let requests = fake.requests();
    assert_eq!(requests.len(), 2 + 4);
    let body = &requests[0];
    assert_eq!(body["model"], "tiny");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["logprobs"], 20);
    let prompt = body["prompt"].as_str().unwrap();
    assert!(prompt.contains("Foo") && prompt.contains("Bar"));
}

#[test]
fn generation_mode_reads_the_text() {
    let fake = FakeServer::start(vec![(200, json!({"choices": [{"text": " Foo\n"}]}))]);
    let backend = completion(&fake.endpoint(), Mode::Generation, 1);
    let task = small_task();
    let map = probe_examples(&backend, &task.context_examples(CoordSpace::Prompt), &PromptConfig::default(), 3).unwrap();
    assert!(map.cells.iter().all(|c| c.label == Some(0)));
    assert!(fake.requests().iter().all(|b| b.get("logprobs").is_none()));
}

#[test]
fn persistent_outage_is_unavailable() {
    let fake = FakeServer::start(vec![(503, json!({}))]);
    let backend = completion(&fake.endpoint(), Mode::Logprob, 2);
    let task = small_task();
    let err = probe_examples(&backend, &task.context_examples(CoordSpace::Prompt), &PromptConfig::default(), 2).unwrap_err();
    assert!(matches!(err, Error::Backend(BackendError::Unavailable(_))), "{err}");
    assert_eq!(fake.requests().len(), 4 * 2);
}

#[test]
fn numeric_round_trip_matches_in_process() {
    let local: Arc<dyn Backend> = Arc::new(BaselineBackend::new(BaselineSpec::svm_rbf()));
    let server = NumericServer::serve_backend(Arc::clone(&local)).unwrap();
    let remote = NumericBackend::at("remote", &server.endpoint()).unwrap();
    let task = generate(&TaskSpec::moon(120, 0.15, 4)).unwrap();
    let task = split_balanced(&task, 64, 20, 4).unwrap();
    let ctx = task.context_examples(CoordSpace::Raw);
    let prompt = PromptConfig::default();
    let a = probe_examples(local.as_ref(), &ctx, &prompt, 20).unwrap();
    let b = probe_examples(&remote, &ctx, &prompt, 20).unwrap();
    let la: Vec<_> = a.cells.iter().map(|c| c.label).collect();
    let lb: Vec<_> = b.cells.iter().map(|c| c.label).collect();
    assert_eq!(la, lb);
    for (x, y) in a.cells.iter().zip(&b.cells) {
        let (px, py) = (x.probs.as_ref().unwrap(), y.probs.as_ref().unwrap());
        assert!(px.iter().zip(py).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}

#[test]
fn cache_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mock.jsonl");
    let mut d = BackendDescriptor::new("mock", BackendKind::Mock);
    d.params = serde_json::to_value(MockScript::NearestCentroid { temperature: 50.0 }).unwrap();
    let task = small_task();
    let ctx = task.context_examples(CoordSpace::Prompt);
    let prompt = PromptConfig::default();

    let first = Arc::new(MockBackend::from_descriptor(d.clone()).unwrap());
    let cached = CachedBackend::open(Arc::clone(&first), &path).unwrap();
    let a = probe_examples(&cached, &ctx, &prompt, 10).unwrap();
    assert_eq!(first.calls(), 100);
    assert_eq!(cached.len(), 100);
    drop(cached);

    let second = Arc::new(MockBackend::from_descriptor(d).unwrap());
    let cached = CachedBackend::open(Arc::clone(&second), &path).unwrap();
    let b = probe_examples(&cached, &ctx, &prompt, 10).unwrap();
    assert_eq!(second.calls(), 0);
    assert_eq!(cached.hits(), 100);
    assert_eq!(a.cells, b.cells);
}
