//! The in-context classifier interface.
//!
//! A [`Backend`] answers one question: given a labelled context and a query
//! point, how strongly does it prefer each class? Implementations:
//!
//! - [`completion::CompletionBackend`]: `/v1/completions` text endpoints, in
//!   logprob or generation mode.
//! - [`numeric::NumericBackend`]: endpoints speaking the numeric
//!   `/predict` protocol.
//! - [`baseline::BaselineBackend`]: the crate's classical classifiers.
//! - [`mock::MockBackend`]: scripted responses with a call log.
//!
//! [`cache::CachedBackend`] wraps any of them with a persistent store, and
//! [`classify_batch`] fans a batch of queries out under a bounded in-flight
//! window while keeping results in query order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing;
use crate::promptfmt::{self, LabelMap, PromptConfig};
use crate::taskgen::{CoordSpace, Example};
use crate::{Error, Point, Result};

pub mod baseline;
pub mod cache;
pub mod completion;
pub mod mock;
pub mod numeric;

/// Log-score given to classes the backend produced no evidence for.
pub const LOG_FLOOR: f64 = -1e9;

/// Per-query failure. Any of these turns the probed cell into an abstain.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("no label token among the returned alternatives")]
    NoLabelSignal,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("generated text {0:?} matches no label")]
    UnparseableGeneration(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Completion,
    Numeric,
    Baseline,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Logprob,
    Generation,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logprob" => Ok(Mode::Logprob),
            "generation" => Ok(Mode::Generation),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_logprobs: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.0,
            max_tokens: 4,
            top_logprobs: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// First backoff in seconds; doubles after every failed attempt.
    pub backoff_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_secs: 0.5,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.backoff_secs * 2f64.powi(attempt as i32))
    }
}

fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Kind-specific settings (baseline hyperparameters, mock script).
    #[serde(default)]
    pub params: serde_json::Value,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, kind: BackendKind) -> Self {
        BackendDescriptor {
            name: name.into(),
            kind,
            endpoint: None,
            model_name: String::new(),
            decode: DecodeParams::default(),
            mode: Mode::Logprob,
            max_in_flight: default_in_flight(),
            retry: RetryPolicy::default(),
            api_key_env: None,
            params: serde_json::Value::Null,
        }
    }

    /// Hash of everything that can change a response. Concurrency and retry
    /// settings are excluded.
    pub fn fingerprint(&self) -> String {
        hashing::fingerprint(&(
            self.kind,
            &self.endpoint,
            &self.model_name,
            &self.decode,
            self.mode,
            &self.params,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitSource {
    TokenLogprob,
    GeneratedText,
    NumericHead,
}

/// Per-class log-scores for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLogits {
    pub scores: Vec<f64>,
    pub source: LogitSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_top_tokens: Option<Vec<(String, f64)>>,
}

impl ClassLogits {
    pub fn new(scores: Vec<f64>, source: LogitSource) -> Self {
        ClassLogits {
            scores,
            source,
            raw_top_tokens: None,
        }
    }

    pub fn one_hot(num_classes: usize, class: usize, source: LogitSource) -> Self {
        let mut scores = vec![LOG_FLOOR; num_classes];
        scores[class] = 0.0;
        ClassLogits::new(scores, source)
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.scores)
    }

    /// Probabilities carry real uncertainty (not a one-hot stand-in).
    pub fn genuine(&self) -> bool {
        self.source != LogitSource::GeneratedText
    }

    pub fn check(&self, num_classes: usize) -> std::result::Result<(), BackendError> {
        if self.scores.len() != num_classes {
            return Err(BackendError::Protocol(format!(
                "expected {num_classes} class scores, got {}",
                self.scores.len()
            )));
        }
        if self.scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
            return Err(BackendError::Protocol("non-finite class score".into()));
        }
        if !self.scores.iter().any(|s| s.is_finite() && *s > LOG_FLOOR) {
            return Err(BackendError::NoLabelSignal);
        }
        Ok(())
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the maximum, ties resolved toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub class: usize,
    pub probs: Vec<f64>,
    pub logits: ClassLogits,
}

impl ClassPrediction {
    pub fn from_logits(logits: ClassLogits) -> Self {
        let probs = logits.probs();
        ClassPrediction {
            class: argmax(&logits.scores),
            probs,
            logits,
        }
    }
}

/// Reads class scores out of a top-k next-token distribution.
///
/// A token counts for a class when, with leading whitespace stripped and
/// case folded, it equals the class's match key or is a non-empty prefix of
/// it. Each class keeps its best such token; unmatched classes sit at
/// [`LOG_FLOOR`].
pub fn logits_from_top_tokens(
    tokens: &[(String, f64)],
    labels: &LabelMap,
) -> std::result::Result<ClassLogits, BackendError> {
    let mut scores = vec![LOG_FLOOR; labels.num_classes()];
    let mut matched = false;
    for (text, logprob) in tokens {
        let folded = text.trim_start().to_lowercase();
        if folded.is_empty() || !logprob.is_finite() {
            continue;
        }
        for (class, key) in labels.keys.iter().enumerate() {
            if key.starts_with(&folded) && *logprob > scores[class] {
                scores[class] = *logprob;
                matched = true;
            }
        }
    }
    if !matched {
        return Err(BackendError::NoLabelSignal);
    }
    Ok(ClassLogits {
        scores,
        source: LogitSource::TokenLogprob,
        raw_top_tokens: Some(tokens.to_vec()),
    })
}

/// Matches the first generated word against the label keys.
pub fn logits_from_generation(text: &str, labels: &LabelMap) -> std::result::Result<ClassLogits, BackendError> {
    let word = promptfmt::match_key(text);
    let word = word.trim_matches(|c: char| !c.is_alphanumeric());
    match labels.class_of_key(word) {
        Some(class) => Ok(ClassLogits::one_hot(labels.num_classes(), class, LogitSource::GeneratedText)),
        None => Err(BackendError::UnparseableGeneration(text.to_string())),
    }
}

/// A context set together with the prompt settings used to present it.
#[derive(Debug, Clone, Copy)]
pub struct ProbeContext<'a> {
    pub examples: &'a [Example],
    pub prompt: &'a PromptConfig,
    pub labels: &'a LabelMap,
}

impl<'a> ProbeContext<'a> {
    pub fn new(examples: &'a [Example], prompt: &'a PromptConfig, labels: &'a LabelMap) -> Result<Self> {
        let k = labels.num_classes();
        if prompt.labels != labels.labels {
            return Err(Error::Config("label map does not match the prompt config".into()));
        }
        if let Some(bad) = examples.iter().find(|e| e.y >= k) {
            return Err(Error::Label { index: bad.y, num_classes: k });
        }
        Ok(ProbeContext { examples, prompt, labels })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn render(&self, query: Point) -> String {
        promptfmt::render_prompt(self.examples, query, self.prompt).expect("labels validated in ProbeContext::new")
    }

    pub fn fingerprint(&self) -> String {
        hashing::fingerprint(&(self.examples, self.prompt))
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Coordinate frame the backend expects its context and queries in.
    fn space(&self) -> CoordSpace;

    /// Bytes identifying the upstream request for `query`: the prompt for
    /// text backends, the encoded numeric payload otherwise.
    fn payload(&self, ctx: &ProbeContext<'_>, query: Point) -> Vec<u8>;

    fn classify_logits(&self, ctx: &ProbeContext<'_>, query: Point) -> std::result::Result<ClassLogits, BackendError>;

    /// True when [`Backend::classify_many`] serves a batch in one exchange.
    fn batched(&self) -> bool {
        false
    }

    fn classify_many(
        &self,
        ctx: &ProbeContext<'_>,
        queries: &[Point],
    ) -> Vec<std::result::Result<ClassLogits, BackendError>> {
        queries.iter().map(|q| self.classify_logits(ctx, *q)).collect()
    }

    fn fingerprint(&self) -> String {
        self.descriptor().fingerprint()
    }
}

impl<T: Backend + ?Sized> Backend for Arc<T> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn space(&self) -> CoordSpace {
        (**self).space()
    }
    fn payload(&self, ctx: &ProbeContext<'_>, query: Point) -> Vec<u8> {
        (**self).payload(ctx, query)
    }
    fn classify_logits(&self, ctx: &ProbeContext<'_>, query: Point) -> std::result::Result<ClassLogits, BackendError> {
        (**self).classify_logits(ctx, query)
    }
    fn batched(&self) -> bool {
        (**self).batched()
    }
    fn classify_many(
        &self,
        ctx: &ProbeContext<'_>,
        queries: &[Point],
    ) -> Vec<std::result::Result<ClassLogits, BackendError>> {
        (**self).classify_many(ctx, queries)
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

/// Builds the backend a descriptor names. No network traffic happens here.
pub fn from_descriptor(descriptor: &BackendDescriptor) -> Result<Arc<dyn Backend>> {
    let d = descriptor.clone();
    Ok(match descriptor.kind {
        BackendKind::Completion => Arc::new(completion::CompletionBackend::new(d)?),
        BackendKind::Numeric => Arc::new(numeric::NumericBackend::new(d)?),
        BackendKind::Baseline => Arc::new(baseline::BaselineBackend::from_descriptor(d)?),
        BackendKind::Mock => Arc::new(mock::MockBackend::from_descriptor(d)?),
    })
}

fn finish(
    logits: std::result::Result<ClassLogits, BackendError>,
    k: usize,
) -> std::result::Result<ClassPrediction, BackendError> {
    let logits = logits?;
    logits.check(k)?;
    Ok(ClassPrediction::from_logits(logits))
}

pub fn classify_query(
    backend: &dyn Backend,
    ctx: &ProbeContext<'_>,
    query: Point,
) -> std::result::Result<ClassPrediction, BackendError> {
    finish(backend.classify_logits(ctx, query), ctx.num_classes())
}

pub type BatchResult = Vec<std::result::Result<ClassPrediction, BackendError>>;

/// Classifies every query, returning results in query order.
///
/// Queries whose payloads coincide are sent upstream once. Unbatched
/// backends see at most `descriptor().max_in_flight` concurrent calls;
/// failures stay local to their query.
pub fn classify_batch(backend: &dyn Backend, ctx: &ProbeContext<'_>, queries: &[Point]) -> BatchResult {
    let k = ctx.num_classes();
    let mut slot_of: HashMap<String, usize> = HashMap::new();
    let mut unique: Vec<Point> = Vec::new();
    let mut assignment = Vec::with_capacity(queries.len());
    for q in queries {
        let key = hashing::sha256_hex(&backend.payload(ctx, *q));
        let slot = *slot_of.entry(key).or_insert_with(|| {
            unique.push(*q);
            unique.len() - 1
        });
        assignment.push(slot);
    }

    let answers: Vec<std::result::Result<ClassLogits, BackendError>> = if backend.batched() {
        backend.classify_many(ctx, &unique)
    } else {
        fan_out(backend, ctx, &unique)
    };

    let answers: Vec<_> = answers.into_iter().map(|a| finish(a, k)).collect();
    assignment.into_iter().map(|slot| answers[slot].clone()).collect()
}

fn fan_out(
    backend: &dyn Backend,
    ctx: &ProbeContext<'_>,
    queries: &[Point],
) -> Vec<std::result::Result<ClassLogits, BackendError>> {
    let workers = backend.descriptor().max_in_flight.max(1).min(queries.len().max(1));
    if workers == 1 {
        return queries.iter().map(|q| backend.classify_logits(ctx, *q)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<ClassLogits, BackendError>>>> =
        Mutex::new(vec![None; queries.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let answer = backend.classify_logits(ctx, queries[i]);
                results.lock().expect("result slots")[i] = Some(answer);
            });
        }
    });
    results
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
