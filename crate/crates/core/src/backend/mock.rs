//! Scripted backend for tests and dry runs.
//!
//! Every upstream call is counted and its prompt hash logged, together with
//! the peak number of concurrent calls.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    logits_from_generation, logits_from_top_tokens, Backend, BackendDescriptor, BackendError, BackendKind,
    ClassLogits, LogitSource, Mode, ProbeContext,
};
use crate::hashing;
use crate::taskgen::CoordSpace;
use crate::{Error, Point, Result};

/// What a script answers for one query.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// Top next-token alternatives, as a completion endpoint would return.
    TopTokens(Vec<(String, f64)>),
    /// Generated text.
    Text(String),
    /// Per-class scores straight from a numeric head.
    Logits(Vec<f64>),
    Fail(BackendError),
}

pub type ScriptFn = dyn Fn(&ProbeContext<'_>, Point) -> MockReply + Send + Sync;

/// Built-in scripts addressable from experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "script", rename_all = "snake_case")]
pub enum MockScript {
    /// Class 1 when `x[dim] > at`, with logistic confidence.
    Threshold {
        #[serde(default)]
        dim: usize,
        at: f64,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
    },
    /// Always the same class, with certainty.
    Constant { class: usize },
    /// Softmax over negative squared distances to the context class means.
    NearestCentroid {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

fn default_sharpness() -> f64 {
    0.2
}

fn default_temperature() -> f64 {
    100.0
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn label_tokens(ctx: &ProbeContext<'_>, logprobs: &[f64]) -> MockReply {
    let mut tokens: Vec<(String, f64)> = ctx
        .labels
        .labels
        .iter()
        .zip(logprobs)
        .filter(|(_, lp)| lp.is_finite())
        .map(|(l, lp)| (l.clone(), *lp))
        .collect();
    tokens.sort_by(|a, b| b.1.total_cmp(&a.1));
    MockReply::TopTokens(tokens)
}

impl MockScript {
    pub fn reply(&self, ctx: &ProbeContext<'_>, query: Point) -> MockReply {
        match *self {
            MockScript::Threshold { dim, at, sharpness } => {
                let z = sharpness * (query[dim] - at);
                label_tokens(ctx, &[log_sigmoid(-z), log_sigmoid(z)])
            }
            MockScript::Constant { class } => label_tokens(
                ctx,
                &(0..ctx.num_classes())
                    .map(|c| if c == class { 0.0 } else { f64::NEG_INFINITY })
                    .collect::<Vec<_>>(),
            ),
            MockScript::NearestCentroid { temperature } => {
                let k = ctx.num_classes();
                let mut sums = vec![[0.0f64; 2]; k];
                let mut counts = vec![0usize; k];
                for ex in ctx.examples {
                    sums[ex.y][0] += ex.x[0];
                    sums[ex.y][1] += ex.x[1];
                    counts[ex.y] += 1;
                }
                let scores: Vec<f64> = (0..k)
                    .map(|c| {
                        if counts[c] == 0 {
                            return f64::NEG_INFINITY;
                        }
                        let n = counts[c] as f64;
                        let d2 = (query[0] - sums[c][0] / n).powi(2) + (query[1] - sums[c][1] / n).powi(2);
                        -d2 / temperature
                    })
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return MockReply::TopTokens(Vec::new());
                }
                let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
                label_tokens(ctx, &scores.iter().map(|s| s - lse).collect::<Vec<_>>())
            }
        }
    }
}

pub struct MockBackend {
    descriptor: BackendDescriptor,
    space: CoordSpace,
    script: Arc<ScriptFn>,
    latency: Option<Duration>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new<F>(name: &str, script: F) -> Self
    where
        F: Fn(&ProbeContext<'_>, Point) -> MockReply + Send + Sync + 'static,
    {
        MockBackend {
            descriptor: BackendDescriptor::new(name, BackendKind::Mock),
            space: CoordSpace::Prompt,
            script: Arc::new(script),
            latency: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Builds a mock from a descriptor whose `params` hold a [`MockScript`].
    /// Generation-mode descriptors answer with the top label as text.
    pub fn from_descriptor(descriptor: BackendDescriptor) -> Result<Self> {
        let script: MockScript = serde_json::from_value(descriptor.params.clone())
            .map_err(|e| Error::Config(format!("mock backend {:?}: {e}", descriptor.name)))?;
        let generation = descriptor.mode == Mode::Generation;
        let mut mock = MockBackend::new(&descriptor.name, move |ctx, q| {
            let reply = script.reply(ctx, q);
            match reply {
                MockReply::TopTokens(tokens) if generation => match tokens.first() {
                    Some((label, _)) => MockReply::Text(format!(" {label}\n")),
                    None => MockReply::Text(String::new()),
                },
                other => other,
            }
        });
        mock.descriptor = descriptor;
        Ok(mock)
    }

    pub fn with_space(mut self, space: CoordSpace) -> Self {
        self.space = space;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.descriptor.max_in_flight = n;
        self
    }

    pub fn with_descriptor(mut self, descriptor: BackendDescriptor) -> Self {
        self.descriptor = descriptor;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    /// SHA-256 of each upstream payload, in call order.
    pub fn call_log(&self) -> Vec<String> {
        self.log.lock().expect("mock log").clone()
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn space(&self) -> CoordSpace {
        self.space
    }

    fn payload(&self, ctx: &ProbeContext<'_>, query: Point) -> Vec<u8> {
        ctx.render(query).into_bytes()
    }

    fn classify_logits(&self, ctx: &ProbeContext<'_>, query: Point) -> std::result::Result<ClassLogits, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .expect("mock log")
            .push(hashing::sha256_hex(&self.payload(ctx, query)));
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        match (self.script)(ctx, query) {
            MockReply::TopTokens(tokens) => logits_from_top_tokens(&tokens, ctx.labels),
            MockReply::Text(text) => logits_from_generation(&text, ctx.labels),
            MockReply::Logits(scores) => Ok(ClassLogits::new(scores, LogitSource::NumericHead)),
            MockReply::Fail(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{classify_batch, classify_query};
    use crate::promptfmt::{make_label_map, PromptConfig};
    use crate::taskgen::Example;

    #[test]
    fn threshold_script_splits_at_the_threshold() {
        let cfg = PromptConfig::default();
        let labels = make_label_map(&cfg).unwrap();
        let ctx = ProbeContext::new(&[], &cfg, &labels).unwrap();
        let mut desc = BackendDescriptor::new("thr", BackendKind::Mock);
        desc.params = serde_json::json!({"script": "threshold", "at": 50.0});
        let mock = MockBackend::from_descriptor(desc).unwrap();
        assert_eq!(classify_query(&mock, &ctx, [10.0, 0.0]).unwrap().class, 0);
        assert_eq!(classify_query(&mock, &ctx, [50.0, 0.0]).unwrap().class, 0);
        assert_eq!(classify_query(&mock, &ctx, [51.0, 0.0]).unwrap().class, 1);
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn generation_mode_mock_answers_in_text() {
        let cfg = PromptConfig::default();
        let labels = make_label_map(&cfg).unwrap();
        let ctx_ex = [Example { x: [0.0, 0.0], y: 0 }, Example { x: [10.0, 0.0], y: 1 }];
        let ctx = ProbeContext::new(&ctx_ex, &cfg, &labels).unwrap();
        let mut desc = BackendDescriptor::new("nc", BackendKind::Mock);
        desc.mode = Mode::Generation;
        desc.params = serde_json::json!({"script": "nearest_centroid"});
        let mock = MockBackend::from_descriptor(desc).unwrap();
        let pred = classify_query(&mock, &ctx, [9.0, 0.0]).unwrap();
        assert_eq!(pred.class, 1);
        assert_eq!(pred.logits.source, LogitSource::GeneratedText);
    }

    #[test]
    fn batch_results_stay_in_query_order_under_bounded_concurrency() {
        let cfg = PromptConfig::default();
        let labels = make_label_map(&cfg).unwrap();
        let ctx = ProbeContext::new(&[], &cfg, &labels).unwrap();
        let mock = MockBackend::new("slow", |_, q| {
            MockReply::Logits(vec![0.0, q[0] - q[1]])
        })
        .with_latency(Duration::from_millis(1))
        .with_max_in_flight(8);
        let queries: Vec<Point> = (0..2500).map(|i| [(i % 50) as f64, (i / 50) as f64]).collect();
        let out = classify_batch(&mock, &ctx, &queries);
        assert_eq!(out.len(), 2500);
        for (q, r) in queries.iter().zip(&out) {
            assert_eq!(r.as_ref().unwrap().class, usize::from(q[0] > q[1]));
        }
        assert_eq!(mock.calls(), 2500);
        assert!(mock.peak_in_flight() <= 8, "peak {}", mock.peak_in_flight());
        assert!(mock.peak_in_flight() > 1);
    }

    #[test]
    fn failures_stay_local_to_their_query() {
        let cfg = PromptConfig::default();
        let labels = make_label_map(&cfg).unwrap();
        let ctx = ProbeContext::new(&[], &cfg, &labels).unwrap();
        let mock = MockBackend::new("flaky", |_, q| {
            if q == [7.0, 7.0] {
                MockReply::Fail(BackendError::Unavailable("down".into()))
            } else {
                MockReply::Logits(vec![0.0, 1.0])
            }
        });
        let queries: Vec<Point> = (0..2500).map(|i| [(i % 50) as f64, (i / 50) as f64]).collect();
        let out = classify_batch(&mock, &ctx, &queries);
        assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 2499);
        assert!(matches!(out[7 * 50 + 7], Err(BackendError::Unavailable(_))));
    }
}
