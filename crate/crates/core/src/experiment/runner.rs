//! Sweep execution and the run ledger.
//!
//! Layout under the output directory:
//!
//! ```text
//! ledger.jsonl          one RunRecord per line, append-only
//! maps/<run_id>.map     decision maps
//! figures/<run_id>.svg  rendered maps
//! cache/                response caches, one file per backend
//! ```
//!
//! A run is identified by the hash of its inputs (task, backend, prompt,
//! context size, test size, grid, scale). Runs already in the ledger with a
//! usable map are skipped, so an interrupted sweep picks up where it
//! stopped and a finished one costs nothing to repeat.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PromptVariant, ScaleSpec};
use super::render::{render_map_svg, MapStyle};
use crate::active::{model_map, train_oracle};
use crate::backend::cache::CachedBackend;
use crate::backend::{self, Backend, BackendDescriptor, BackendError, ProbeContext};
use crate::baselines::ClassifierModel;
use crate::hashing;
use crate::metrics::{map_metrics, test_accuracy, MapMetrics};
use crate::probe::{build_grid, probe_map, DecisionMap};
use crate::promptfmt::{make_label_map, order_context, PromptConfig};
use crate::taskgen::{generate, scale_to_prompt_space, split_balanced, TaskInstance, TaskSpec};
use crate::{Error, Point, Result};

pub const LEDGER_FILE: &str = "ledger.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Too many abstains; the map is kept.
    Degraded,
    Failed,
}

/// Everything needed to redo one probe, plus what came out of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_fingerprint: String,
    pub task_fingerprint: String,
    pub backend_fingerprint: String,
    pub prompt_fingerprint: String,
    pub task: TaskSpec,
    pub backend: BackendDescriptor,
    pub prompt: PromptConfig,
    pub prompt_name: String,
    pub scale: ScaleSpec,
    pub n_context: usize,
    pub n_test: usize,
    pub grid_g: usize,
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
    /// Paths relative to the output directory.
    #[serde(default)]
    pub map_file: Option<String>,
    #[serde(default)]
    pub svg_file: Option<String>,
    #[serde(default)]
    pub map_fingerprint: Option<String>,
    #[serde(default)]
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub metrics: Option<MapMetrics>,
    #[serde(default)]
    pub abstain_count: Option<usize>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn backend_name(&self) -> &str {
        &self.backend.name
    }

    pub fn has_map(&self) -> bool {
        self.status != RunStatus::Failed && self.map_file.is_some()
    }

    pub fn load_map(&self, outputs: &Path) -> Result<DecisionMap> {
        let file = self
            .map_file
            .as_ref()
            .ok_or_else(|| Error::Format(format!("run {} has no map", self.run_id)))?;
        DecisionMap::load(outputs.join(file))
    }
}

/// Identity of a run: a hash over everything that shapes its output.
pub fn run_id(
    task_fp: &str,
    backend_fp: &str,
    prompt_fp: &str,
    n_context: usize,
    n_test: usize,
    grid_g: usize,
    scale: &ScaleSpec,
) -> String {
    hashing::fingerprint(&(task_fp, backend_fp, prompt_fp, n_context, n_test, grid_g, scale))[..16].to_string()
}

/// Reads every parseable record; unreadable lines are skipped with a warning.
pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("{}:{}: skipping unreadable record: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

/// The last record per run id, in first-appearance order.
pub fn latest_records(records: &[RunRecord]) -> Vec<RunRecord> {
    let mut order: Vec<&str> = Vec::new();
    let mut last: HashMap<&str, &RunRecord> = HashMap::new();
    for r in records {
        if last.insert(&r.run_id, r).is_none() {
            order.push(&r.run_id);
        }
    }
    order.into_iter().map(|id| last[id].clone()).collect()
}

struct LedgerWriter {
    file: File,
}

impl LedgerWriter {
    fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(path)?;
        // A crash can leave a torn last line; start the next record on a fresh one.
        let len = file.metadata()?.len();
        if len > 0 {
            use std::io::{Read, Seek, SeekFrom};
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        Ok(LedgerWriter { file })
    }

    fn append(&mut self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepSummary {
    /// One record per planned run: fresh ones and those found in the ledger.
    pub records: Vec<RunRecord>,
    pub executed: usize,
    pub skipped: usize,
}

impl SweepSummary {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.status == RunStatus::Failed).count()
    }

    pub fn degraded(&self) -> usize {
        self.records.iter().filter(|r| r.status == RunStatus::Degraded).count()
    }

    /// True when some run failed because its backend could not be reached.
    pub fn any_unavailable(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.status == RunStatus::Failed && r.error.as_deref().is_some_and(|e| e.contains("unavailable")))
    }
}

/// Generates, scales and splits one task.
pub fn prepare_task(spec: &TaskSpec, scale: &ScaleSpec, n_context: usize, n_test: usize) -> Result<TaskInstance> {
    let task = generate(spec)?;
    let task = scale_to_prompt_space(&task, scale.lo, scale.hi, scale.integer);
    split_balanced(&task, n_context, n_test, spec.seed)
}

struct Outcome {
    map: DecisionMap,
    status: RunStatus,
    accuracy: f64,
}

/// Probes one (task, prompt) pair and scores the test set.
pub fn probe_task(backend: &dyn Backend, task: &TaskInstance, prompt: &PromptConfig, grid_g: usize) -> Result<(DecisionMap, RunStatus)> {
    let space = backend.space();
    let labels = make_label_map(prompt)?;
    let context = order_context(&task.context_examples(space), prompt);
    let ctx = ProbeContext::new(&context, prompt, &labels)?;
    let points: Vec<Point> = context.iter().map(|e| e.x).collect();
    let grid = build_grid(&points, grid_g)?;
    let (mut map, status) = match probe_map(backend, &ctx, &grid) {
        Ok(m) => (m, RunStatus::Ok),
        Err(Error::ProbeDegraded { map, .. }) => (*map, RunStatus::Degraded),
        Err(e) => return Err(e),
    };
    map.accuracy = Some(test_accuracy(backend, &ctx, &task.test_examples(space))?);
    Ok((map, status))
}

fn execute(backend: &dyn Backend, task: &TaskInstance, prompt: &PromptConfig, grid_g: usize) -> Result<Outcome> {
    let (map, status) = probe_task(backend, task, prompt, grid_g)?;
    let accuracy = map.accuracy.unwrap_or(f64::NAN);
    Ok(Outcome { map, status, accuracy })
}

/// Redoes a recorded run against `backend` and returns its map.
pub fn reproduce(record: &RunRecord, backend: &dyn Backend) -> Result<DecisionMap> {
    let task = prepare_task(&record.task, &record.scale, record.n_context, record.n_test)?;
    Ok(probe_task(backend, &task, &record.prompt, record.grid_g)?.0)
}

fn cache_file(dir: &Path, descriptor: &BackendDescriptor) -> PathBuf {
    let safe: String = descriptor
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}-{}.jsonl", &descriptor.fingerprint()[..12]))
}

/// Runs the sweep with backends built from the config's descriptors.
pub fn run(config: &ExperimentConfig) -> Result<SweepSummary> {
    config.validate()?;
    let backends = config
        .backends
        .iter()
        .map(backend::from_descriptor)
        .collect::<Result<Vec<_>>>()?;
    run_with_backends(config, backends)
}

/// Runs the sweep against the given backends, one per config descriptor
/// and in the same order. Each is wrapped in a persistent cache.
pub fn run_with_backends(config: &ExperimentConfig, backends: Vec<Arc<dyn Backend>>) -> Result<SweepSummary> {
    config.validate()?;
    if backends.len() != config.backends.len() {
        return Err(Error::Config(format!(
            "{} backends supplied for {} descriptors",
            backends.len(),
            config.backends.len()
        )));
    }
    let out = &config.outputs;
    std::fs::create_dir_all(out.join("maps"))?;
    std::fs::create_dir_all(out.join("figures"))?;
    let ledger_path = out.join(LEDGER_FILE);
    let done: HashMap<String, RunRecord> = latest_records(&read_ledger(&ledger_path)?)
        .into_iter()
        .filter(RunRecord::has_map)
        .map(|r| (r.run_id.clone(), r))
        .collect();
    let mut ledger = LedgerWriter::open(&ledger_path)?;
    let cache_dir = config.cache_dir();
    let cached: Vec<CachedBackend<Arc<dyn Backend>>> = backends
        .into_iter()
        .zip(&config.backends)
        .map(|(b, d)| CachedBackend::open(b, cache_file(&cache_dir, d)))
        .collect::<Result<_>>()?;
    let config_fp = config.fingerprint();
    let max_n = config.max_context();
    let mut summary = SweepSummary::default();
    let mut unreachable: HashSet<usize> = HashSet::new();

    for template in &config.tasks {
        for &seed in &template.seeds {
            let n_points = template.required_points(max_n, config.n_test);
            let spec = template.spec(seed, n_points);
            let task_fp = hashing::fingerprint(&spec);
            let base = generate(&spec)
                .map(|t| scale_to_prompt_space(&t, config.scale.lo, config.scale.hi, config.scale.integer));
            let mut oracle: Option<Option<ClassifierModel>> = None;

            for (b, (backend, descriptor)) in cached.iter().zip(&config.backends).enumerate() {
                let backend_fp = descriptor.fingerprint();
                for variant in &config.prompt_variants {
                    let prompt_fp = hashing::fingerprint(&variant.prompt);
                    for &n in &config.n_context {
                        let id = run_id(&task_fp, &backend_fp, &prompt_fp, n, config.n_test, config.grid_g, &config.scale);
                        if let Some(existing) = done.get(&id) {
                            summary.skipped += 1;
                            summary.records.push(existing.clone());
                            continue;
                        }
                        let mut record = RunRecord {
                            run_id: id.clone(),
                            config_fingerprint: config_fp.clone(),
                            task_fingerprint: task_fp.clone(),
                            backend_fingerprint: backend_fp.clone(),
                            prompt_fingerprint: prompt_fp.clone(),
                            task: spec.clone(),
                            backend: descriptor.clone(),
                            prompt: variant.prompt.clone(),
                            prompt_name: variant.display_name(),
                            scale: config.scale,
                            n_context: n,
                            n_test: config.n_test,
                            grid_g: config.grid_g,
                            status: RunStatus::Failed,
                            error: None,
                            map_file: None,
                            svg_file: None,
                            map_fingerprint: None,
                            accuracy: None,
                            metrics: None,
                            abstain_count: None,
                            wall_time_secs: 0.0,
                        };
                        if unreachable.contains(&b) {
                            record.error = Some("backend unavailable (an earlier run could not reach it)".into());
                            ledger.append(&record)?;
                            summary.records.push(record);
                            continue;
                        }
                        let started = Instant::now();
                        let result = base
                            .as_ref()
                            .map_err(|e| Error::Config(format!("task generation: {e}")))
                            .and_then(|t| split_balanced(t, n, config.n_test, seed))
                            .and_then(|t| {
                                let outcome = execute(backend, &t, &variant.prompt, config.grid_g)?;
                                let oracle_map = if config.oracle_metrics {
                                    let model = oracle.get_or_insert_with(|| {
                                        train_oracle(&spec, 1024, seed).map(|(m, _)| m).ok()
                                    });
                                    match model {
                                        Some(m) => Some(model_map(m, &t, backend.space(), &outcome.map.grid)?),
                                        None => None,
                                    }
                                } else {
                                    None
                                };
                                Ok((outcome, oracle_map))
                            });
                        record.wall_time_secs = started.elapsed().as_secs_f64();
                        summary.executed += 1;
                        match result {
                            Ok((outcome, oracle_map)) => {
                                fill_success(&mut record, out, &outcome, oracle_map.as_ref(), variant)?;
                            }
                            Err(e) => {
                                if matches!(e, Error::Backend(BackendError::Unavailable(_))) {
                                    unreachable.insert(b);
                                }
                                log::warn!("run {id} failed: {e}");
                                record.error = Some(e.to_string());
                            }
                        }
                        ledger.append(&record)?;
                        summary.records.push(record);
                    }
                }
            }
        }
    }
    Ok(summary)
}

fn fill_success(
    record: &mut RunRecord,
    out: &Path,
    outcome: &Outcome,
    oracle_map: Option<&DecisionMap>,
    variant: &PromptVariant,
) -> Result<()> {
    let map_rel = format!("maps/{}.map", record.run_id);
    let svg_rel = format!("figures/{}.svg", record.run_id);
    outcome.map.save(out.join(&map_rel))?;
    let style = MapStyle {
        title: Some(format!(
            "{} / {} / {} seed {} / n={}",
            record.backend.name,
            variant.display_name(),
            record.task.kind.name(),
            record.task.seed,
            record.n_context
        )),
        ..MapStyle::default()
    };
    std::fs::write(out.join(&svg_rel), render_map_svg(&outcome.map, &style))?;
    record.status = outcome.status;
    record.accuracy = Some(outcome.accuracy);
    record.metrics = Some(map_metrics(&outcome.map, oracle_map)?);
    record.abstain_count = Some(outcome.map.abstain_count());
    record.map_fingerprint = Some(outcome.map.fingerprint());
    record.map_file = Some(map_rel);
    record.svg_file = Some(svg_rel);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockScript};
    use crate::backend::BackendKind;
    use crate::experiment::config::TaskTemplate;
    use crate::taskgen::TaskKind;

    fn mock_descriptor(name: &str) -> BackendDescriptor {
        let mut d = BackendDescriptor::new(name, BackendKind::Mock);
        d.params = serde_json::to_value(MockScript::NearestCentroid { temperature: 100.0 }).unwrap();
        d
    }

    fn small_config(dir: &Path) -> ExperimentConfig {
        let mut task = TaskTemplate::new(TaskKind::Linear, [0, 1]);
        task.class_sep = Some(1.5);
        ExperimentConfig {
            name: "t".into(),
            tasks: vec![task],
            backends: vec![mock_descriptor("m")],
            prompt_variants: vec![PromptVariant::new(PromptConfig::default())],
            n_context: vec![8, 16],
            n_test: 20,
            grid_g: 10,
            scale: ScaleSpec::default(),
            outputs: dir.to_path_buf(),
            cache_dir: None,
            oracle_metrics: false,
            active: None,
        }
    }

    #[test]
    fn sweep_writes_records_maps_and_figures() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let summary = run(&cfg).unwrap();
        assert_eq!(summary.records.len(), 4);
        assert_eq!(summary.executed, 4);
        for r in &summary.records {
            assert_eq!(r.status, RunStatus::Ok, "{:?}", r.error);
            let map = r.load_map(dir.path()).unwrap();
            assert_eq!(map.cells.len(), 100);
            assert_eq!(Some(map.fingerprint()), r.map_fingerprint);
            assert!(dir.path().join(r.svg_file.as_ref().unwrap()).exists());
            assert!(r.accuracy.unwrap() > 0.5);
        }
        assert_eq!(read_ledger(dir.path().join(LEDGER_FILE)).unwrap().len(), 4);

        let again = run(&cfg).unwrap();
        assert_eq!(again.executed, 0);
        assert_eq!(again.skipped, 4);
        assert_eq!(read_ledger(dir.path().join(LEDGER_FILE)).unwrap().len(), 4);
    }

    #[test]
    fn records_reproduce_their_maps() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let summary = run(&cfg).unwrap();
        let backend = MockBackend::from_descriptor(mock_descriptor("m")).unwrap();
        for r in &summary.records {
            let map = reproduce(r, &backend).unwrap();
            assert_eq!(map, r.load_map(dir.path()).unwrap());
        }
    }

    #[test]
    fn failed_runs_are_retried_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        let mut down = BackendDescriptor::new("down", BackendKind::Numeric);
        down.endpoint = Some("http://127.0.0.1:9".into());
        down.retry.max_attempts = 1;
        down.retry.backoff_secs = 0.0;
        cfg.backends.push(down);
        let summary = run(&cfg).unwrap();
        assert_eq!(summary.records.len(), 8);
        assert_eq!(summary.failed(), 4);
        assert!(summary.any_unavailable());
        assert!(summary
            .records
            .iter()
            .filter(|r| r.backend.name == "m")
            .all(|r| r.status == RunStatus::Ok));
        let again = run(&cfg).unwrap();
        assert_eq!(again.skipped, 4);
        assert_eq!(again.executed, 1);
    }

    #[test]
    fn latest_record_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let summary = run(&cfg).unwrap();
        let mut records = summary.records.clone();
        let mut newer = records[0].clone();
        newer.accuracy = Some(0.0);
        records.push(newer);
        let latest = latest_records(&records);
        assert_eq!(latest.len(), 4);
        assert_eq!(latest[0].accuracy, Some(0.0));
    }

    #[test]
    fn run_ids_depend_on_every_input() {
        let s = ScaleSpec::default();
        let base = run_id("t", "b", "p", 8, 20, 50, &s);
        assert_ne!(base, run_id("t2", "b", "p", 8, 20, 50, &s));
        assert_ne!(base, run_id("t", "b", "p", 16, 20, 50, &s));
        assert_ne!(base, run_id("t", "b", "p", 8, 20, 40, &s));
        assert_eq!(base, run_id("t", "b", "p", 8, 20, 50, &s));
    }
}
