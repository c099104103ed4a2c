//! Experiment configuration.
//!
//! TOML or JSON (picked by file extension). `${VAR}` anywhere in the text is
//! replaced by the environment variable `VAR` before parsing, which keeps
//! API keys and endpoints out of checked-in files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::ActiveConfig;
use crate::backend::{self, BackendDescriptor, BackendKind, Mode};
use crate::hashing;
use crate::promptfmt::PromptConfig;
use crate::taskgen::{Regime, TaskKind, TaskSpec};
use crate::{Error, Result};

fn default_name() -> String {
    "experiment".into()
}

fn default_classes() -> usize {
    2
}

fn default_n_test() -> usize {
    100
}

fn default_grid() -> usize {
    50
}

fn default_outputs() -> PathBuf {
    PathBuf::from("runs")
}

fn default_variants() -> Vec<PromptVariant> {
    vec![PromptVariant {
        name: None,
        prompt: PromptConfig::default(),
    }]
}

/// One task family with a list of seeds; each seed is its own task.
///
/// Parameters left unset are drawn from the regime's interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTemplate {
    pub kind: TaskKind,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub class_sep: Option<f64>,
    #[serde(default)]
    pub factor: Option<f64>,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub cluster_std: Option<f64>,
    /// Total points generated; defaults to just enough for the largest
    /// context plus the test set.
    #[serde(default)]
    pub n_points: Option<usize>,
    pub seeds: Vec<u64>,
}

impl TaskTemplate {
    pub fn new(kind: TaskKind, seeds: impl IntoIterator<Item = u64>) -> Self {
        TaskTemplate {
            kind,
            num_classes: 2,
            regime: Regime::Train,
            class_sep: None,
            factor: None,
            noise: None,
            cluster_std: None,
            n_points: None,
            seeds: seeds.into_iter().collect(),
        }
    }

    pub fn spec(&self, seed: u64, n_points: usize) -> TaskSpec {
        let mut spec = TaskSpec::draw(self.kind, self.num_classes, n_points, self.regime, seed);
        if let Some(v) = self.class_sep {
            spec.class_sep = v;
        }
        if let Some(v) = self.factor {
            spec.factor = v;
        }
        if let Some(v) = self.noise {
            spec.noise = v;
        }
        if let Some(v) = self.cluster_std {
            spec.cluster_std = v;
        }
        spec
    }

    /// Points needed so every class can supply its share of the largest
    /// context and of the test set.
    pub fn required_points(&self, max_context: usize, n_test: usize) -> usize {
        let k = self.num_classes.max(1);
        self.n_points
            .unwrap_or(k * (max_context / k + n_test.div_ceil(k)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVariant {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub prompt: PromptConfig,
}

impl PromptVariant {
    pub fn new(prompt: PromptConfig) -> Self {
        PromptVariant { name: None, prompt }
    }

    /// The explicit name, else `Foo-Bar` plus `-o<seed>` when shuffled.
    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let mut n = self.prompt.labels.join("-");
        if let Some(s) = self.prompt.ordering_seed {
            n.push_str(&format!("-o{s}"));
        }
        n
    }
}

/// Affine target range for prompt coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
}

impl Default for ScaleSpec {
    fn default() -> Self {
        ScaleSpec {
            lo: 0.0,
            hi: 100.0,
            integer: true,
        }
    }
}

/// Active-learning runs: which backend to drive, plus the loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSection {
    pub backend: String,
    #[serde(flatten)]
    pub config: ActiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub tasks: Vec<TaskTemplate>,
    pub backends: Vec<BackendDescriptor>,
    #[serde(default = "default_variants")]
    pub prompt_variants: Vec<PromptVariant>,
    pub n_context: Vec<usize>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_grid")]
    pub grid_g: usize,
    #[serde(default)]
    pub scale: ScaleSpec,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    /// Defaults to `<outputs>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Also fit a logistic-regression oracle per task and record each
    /// map's disagreement with it.
    #[serde(default)]
    pub oracle_metrics: bool,
    #[serde(default)]
    pub active: Option<ActiveSection>,
}

/// Command-line settings that replace the corresponding config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub outputs: Option<PathBuf>,
    pub grid_g: Option<usize>,
    pub n_context: Option<Vec<usize>>,
    pub labels: Option<Vec<String>>,
    pub ordering_seed: Option<u64>,
    pub mode: Option<Mode>,
    /// Keep only the backends with these names.
    pub backends: Option<Vec<String>>,
}

impl ExperimentConfig {
    /// Reads, interpolates, parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config = Self::parse(&text, json)?;
        config.validate()?;
        Ok(config)
    }

    /// Interpolates and parses without validating.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let text = interpolate_env(text, |name| std::env::var(name).ok())?;
        if json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))
        }
    }

    pub fn fingerprint(&self) -> String {
        hashing::fingerprint(self)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.outputs.join("cache"))
    }

    pub fn max_context(&self) -> usize {
        self.n_context.iter().copied().max().unwrap_or(0)
    }

    /// Every problem with the config, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.tasks.is_empty() {
            out.push("no tasks configured".to_string());
        }
        if self.backends.is_empty() {
            out.push("no backends configured".to_string());
        }
        if self.prompt_variants.is_empty() {
            out.push("no prompt variants configured".to_string());
        }
        if self.n_context.is_empty() {
            out.push("n_context list is empty".to_string());
        }
        let mut seen_n = HashSet::new();
        for &n in &self.n_context {
            if n == 0 {
                out.push("n_context values must be positive".to_string());
            }
            if !seen_n.insert(n) {
                out.push(format!("n_context {n} is listed twice"));
            }
        }
        if self.n_test == 0 {
            out.push("n_test must be positive".to_string());
        }
        if self.grid_g < 2 {
            out.push(format!("grid_g must be at least 2, got {}", self.grid_g));
        }
        if !(self.scale.hi > self.scale.lo) {
            out.push(format!("scale range [{}, {}] is empty", self.scale.lo, self.scale.hi));
        }

        for (t, task) in self.tasks.iter().enumerate() {
            let what = format!("task {t} ({})", task.kind.name());
            if task.seeds.is_empty() {
                out.push(format!("{what}: seed list is empty"));
            }
            let k_ok = match task.kind {
                TaskKind::Linear => (2..=4).contains(&task.num_classes),
                TaskKind::Circle | TaskKind::Moon => task.num_classes == 2,
            };
            if !k_ok {
                out.push(format!("{what}: unsupported class count {}", task.num_classes));
                continue;
            }
            for &n in &self.n_context {
                if n % task.num_classes != 0 {
                    out.push(format!("{what}: n_context {n} is not divisible by {} classes", task.num_classes));
                }
            }
            if let Some(v) = task.class_sep {
                if !(v > 0.0) {
                    out.push(format!("{what}: class_sep must be positive"));
                }
            }
            if let Some(v) = task.factor {
                if !(v > 0.0 && v < 1.0) {
                    out.push(format!("{what}: factor must lie in (0, 1)"));
                }
            }
            if let Some(v) = task.noise {
                if !(v >= 0.0) {
                    out.push(format!("{what}: noise must be non-negative"));
                }
            }
            if let Some(v) = task.cluster_std {
                if !(v > 0.0) {
                    out.push(format!("{what}: cluster_std must be positive"));
                }
            }
            let need = task.num_classes * (self.max_context() / task.num_classes + self.n_test.div_ceil(task.num_classes));
            if let Some(n) = task.n_points {
                if n < need {
                    out.push(format!("{what}: n_points {n} is below the {need} needed for context and test sets"));
                }
            }
            for (v, variant) in self.prompt_variants.iter().enumerate() {
                if variant.prompt.num_classes() != task.num_classes {
                    out.push(format!(
                        "prompt variant {v} has {} labels but {what} has {} classes",
                        variant.prompt.num_classes(),
                        task.num_classes
                    ));
                }
            }
        }

        let mut names = HashSet::new();
        for b in &self.backends {
            if !names.insert(b.name.as_str()) {
                out.push(format!("backend name {:?} is used twice", b.name));
            }
            if b.max_in_flight == 0 {
                out.push(format!("backend {:?}: max_in_flight must be positive", b.name));
            }
            if let Err(e) = backend::from_descriptor(b) {
                out.push(format!("backend {:?}: {e}", b.name));
            }
        }

        let mut variant_names = HashSet::new();
        for (v, variant) in self.prompt_variants.iter().enumerate() {
            if let Err(e) = variant.prompt.validate() {
                out.push(format!("prompt variant {v}: {e}"));
            }
            if !variant_names.insert(variant.display_name()) {
                out.push(format!("prompt variant name {:?} is used twice", variant.display_name()));
            }
        }

        if let Some(active) = &self.active {
            if !self.backends.iter().any(|b| b.name == active.backend) {
                out.push(format!("active section references unknown backend {:?}", active.backend));
            }
            if let Err(e) = active.config.validate() {
                out.push(format!("active section: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("{} problem(s):\n  {}", problems.len(), problems.join("\n  "))))
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            for t in &mut self.tasks {
                t.seeds = vec![seed];
            }
        }
        if let Some(out) = &o.outputs {
            self.outputs = out.clone();
        }
        if let Some(g) = o.grid_g {
            self.grid_g = g;
        }
        if let Some(n) = &o.n_context {
            self.n_context = n.clone();
        }
        if let Some(labels) = &o.labels {
            for v in &mut self.prompt_variants {
                v.prompt.labels = labels.clone();
            }
        }
        if let Some(s) = o.ordering_seed {
            for v in &mut self.prompt_variants {
                v.prompt.ordering_seed = Some(s);
            }
        }
        if let Some(mode) = o.mode {
            for b in &mut self.backends {
                if matches!(b.kind, BackendKind::Completion | BackendKind::Mock) {
                    b.mode = mode;
                }
            }
        }
        if let Some(keep) = &o.backends {
            self.backends.retain(|b| keep.contains(&b.name));
        }
    }
}

/// Replaces every `${NAME}` using `lookup`. All missing variables are
/// reported together. `$$` escapes a literal `$`.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut missing = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        if let Some(tail) = after.strip_prefix('$') {
            out.push('$');
            rest = tail;
        } else if let Some(body) = after.strip_prefix('{') {
            let Some(end) = body.find('}') else {
                return Err(Error::Config("unterminated ${ in config".into()));
            };
            let name = &body[..end];
            match lookup(name) {
                Some(v) => out.push_str(&v),
                None => missing.push(name.to_string()),
            }
            rest = &body[end + 1..];
        } else {
            out.push('$');
            rest = after;
        }
    }
    out.push_str(rest);
    if !missing.is_empty() {
        return Err(Error::Config(format!("unset environment variables: {}", missing.join(", "))));
    }
    Ok(out)
}
