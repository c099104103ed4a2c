//! Few-shot prompt rendering.
//!
//! Layout, byte for byte:
//!
//! ```text
//! <instruction>\n
//! \n
//! Input: <x0> <x1>\n
//! Label: <label>\n
//! ...
//! \n
//! What is the label for this input?\n
//! Input: <q0> <q1>\n
//! Label:
//! ```

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::taskgen::Example;
use crate::{Error, Point, Result};

pub const DEFAULT_INSTRUCTION: &str = "Given pairs of numbers and their labels, predict the label for a new input pair of numbers based on the provided data.\nAnswer with only one of the labels {labels}:";
pub const DEFAULT_QUERY_PREAMBLE: &str = "What is the label for this input?";

fn default_preamble() -> String {
    DEFAULT_QUERY_PREAMBLE.to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptConfig {
    pub labels: Vec<String>,
    /// `{labels}` is replaced by the quoted label list. `None` uses
    /// [`DEFAULT_INSTRUCTION`].
    #[serde(default)]
    pub instruction_template: Option<String>,
    #[serde(default)]
    pub ordering_seed: Option<u64>,
    #[serde(default = "default_true")]
    pub integer_mode: bool,
    #[serde(default = "default_preamble")]
    pub query_preamble: String,
    /// Emit `"Label: "` instead of `"Label:"` at the very end.
    #[serde(default)]
    pub trailing_space: bool,
}

impl PromptConfig {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        PromptConfig {
            labels: labels.into_iter().map(Into::into).collect(),
            instruction_template: None,
            ordering_seed: None,
            integer_mode: true,
            query_preamble: default_preamble(),
            trailing_space: false,
        }
    }

    pub fn with_ordering_seed(mut self, seed: Option<u64>) -> Self {
        self.ordering_seed = seed;
        self
    }

    pub fn with_integer_mode(mut self, integer_mode: bool) -> Self {
        self.integer_mode = integer_mode;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn instruction(&self) -> String {
        let template = self.instruction_template.as_deref().unwrap_or(DEFAULT_INSTRUCTION);
        template.replace("{labels}", &quoted_label_list(&self.labels))
    }

    /// Checks the label invariants (K >= 2, distinct after trim + case-fold).
    pub fn validate(&self) -> Result<()> {
        make_label_map(self).map(|_| ())
    }
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig::new(["Foo", "Bar"])
    }
}

/// `'A' and 'B'`, `'A', 'B' and 'C'`, ...
fn quoted_label_list(labels: &[String]) -> String {
    let quoted: Vec<String> = labels.iter().map(|l| format!("'{l}'")).collect();
    match quoted.len() {
        0 => String::new(),
        1 => quoted[0].clone(),
        n => format!("{} and {}", quoted[..n - 1].join(", "), quoted[n - 1]),
    }
}

pub fn format_number(v: f64, integer_mode: bool) -> String {
    let s = if integer_mode {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    };
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn push_input(out: &mut String, x: Point, integer_mode: bool) {
    out.push_str("Input: ");
    out.push_str(&format_number(x[0], integer_mode));
    out.push(' ');
    out.push_str(&format_number(x[1], integer_mode));
    out.push('\n');
}

/// Everything up to and including the last context example.
pub fn render_prefix(context: &[Example], cfg: &PromptConfig) -> Result<String> {
    let k = cfg.num_classes();
    let mut out = String::with_capacity(160 + 32 * context.len());
    out.push_str(&cfg.instruction());
    out.push_str("\n\n");
    for ex in context {
        let label = cfg.labels.get(ex.y).ok_or(Error::Label { index: ex.y, num_classes: k })?;
        push_input(&mut out, ex.x, cfg.integer_mode);
        out.push_str("Label: ");
        out.push_str(label);
        out.push('\n');
    }
    Ok(out)
}

/// The query block that follows [`render_prefix`].
pub fn render_query(query: Point, cfg: &PromptConfig) -> String {
    let mut out = String::with_capacity(64);
    out.push('\n');
    out.push_str(&cfg.query_preamble);
    out.push('\n');
    push_input(&mut out, query, cfg.integer_mode);
    out.push_str(if cfg.trailing_space { "Label: " } else { "Label:" });
    out
}

pub fn render_prompt(context: &[Example], query: Point, cfg: &PromptConfig) -> Result<String> {
    let mut out = render_prefix(context, cfg)?;
    out.push_str(&render_query(query, cfg));
    Ok(out)
}

/// Fisher-Yates shuffle under the `shuffle` substream of `seed`.
pub fn permute_context(context: &[Example], seed: u64) -> Vec<Example> {
    let mut out = context.to_vec();
    out.shuffle(&mut rng::substream(seed, rng::SHUFFLE));
    out
}

/// Applies the config's ordering seed, if any.
pub fn order_context(context: &[Example], cfg: &PromptConfig) -> Vec<Example> {
    match cfg.ordering_seed {
        Some(seed) => permute_context(context, seed),
        None => context.to_vec(),
    }
}

/// Class index <-> label string correspondence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub labels: Vec<String>,
    /// First whitespace token of each label, case-folded.
    pub keys: Vec<String>,
}

pub fn match_key(label: &str) -> String {
    label.split_whitespace().next().unwrap_or("").to_lowercase()
}

pub fn make_label_map(cfg: &PromptConfig) -> Result<LabelMap> {
    if cfg.labels.len() < 2 {
        return Err(Error::Param(format!("need at least 2 labels, got {}", cfg.labels.len())));
    }
    let keys: Vec<String> = cfg.labels.iter().map(|l| match_key(l)).collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::AmbiguousLabels(format!("label {i} is blank")));
        }
        if let Some(j) = keys[..i].iter().position(|other| other == key) {
            return Err(Error::AmbiguousLabels(format!(
                "{:?} and {:?} share match key {key:?}",
                cfg.labels[j], cfg.labels[i]
            )));
        }
    }
    Ok(LabelMap { labels: cfg.labels.clone(), keys })
}

impl LabelMap {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn class_of_key(&self, key: &str) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }
}

/// Inverse of [`render_prompt`]: recovers the context and the query.
pub fn parse_prompt(text: &str, cfg: &PromptConfig) -> Result<(Vec<Example>, Point)> {
    let bad = |what: &str| Error::Format(format!("prompt: {what}"));
    let instruction = cfg.instruction();
    let body = text
        .strip_prefix(instruction.as_str())
        .and_then(|rest| rest.strip_prefix("\n\n"))
        .ok_or_else(|| bad("instruction header mismatch"))?;
    let tail_marker = format!("\n{}\n", cfg.query_preamble);
    let split_at = body.rfind(&tail_marker).ok_or_else(|| bad("missing query block"))?;
    let (examples_text, query_text) = body.split_at(split_at);
    let query_text = &query_text[tail_marker.len()..];

    let parse_input = |line: &str| -> Result<Point> {
        let nums = line.strip_prefix("Input: ").ok_or_else(|| bad("expected 'Input: '"))?;
        let mut it = nums.split(' ');
        let mut next = || -> Result<f64> {
            it.next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad("bad number"))
        };
        Ok([next()?, next()?])
    };

    let mut context = Vec::new();
    let mut lines = examples_text.lines();
    while let Some(input) = lines.next() {
        let x = parse_input(input)?;
        let label = lines
            .next()
            .and_then(|l| l.strip_prefix("Label: "))
            .ok_or_else(|| bad("expected 'Label: '"))?;
        let y = cfg
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| bad("unknown label"))?;
        context.push(Example { x, y });
    }
    let suffix = if cfg.trailing_space { "\nLabel: " } else { "\nLabel:" };
    let query_line = query_text.strip_suffix(suffix).ok_or_else(|| bad("missing final 'Label:'"))?;
    Ok((context, parse_input(query_line)?))
}
