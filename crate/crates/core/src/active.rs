//! Uncertainty-driven growth of the context set.
//!
//! Each step probes the current context over a fixed grid, picks new query
//! points (the highest-entropy cells, kept apart by a minimum grid distance,
//! or uniformly random cells for the control), labels them with a
//! logistic-regression oracle and appends them to the context.

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ProbeContext};
use crate::baselines::{self, BaselineSpec, ClassifierModel, Dataset};
use crate::metrics::test_accuracy;
use crate::probe::{build_grid, probe_map, DecisionMap, GridSpec};
use crate::promptfmt::{make_label_map, permute_context, PromptConfig};
use crate::rng::{derive_seed, substream, ORACLE, RANDOM_SAMPLING};
use crate::taskgen::{generate, Example, TaskInstance, TaskSpec};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Active,
    Random,
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "active" => Ok(Policy::Active),
            "random" => Ok(Policy::Random),
            other => Err(Error::Config(format!("unknown policy {other:?} (expected active or random)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    #[serde(default = "default_schedule")]
    pub schedule: Vec<usize>,
    /// Minimum Euclidean distance between picks of one step, in grid cells.
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
    #[serde(default = "default_oracle_size")]
    pub oracle_train_size: usize,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default = "default_grid")]
    pub grid_g: usize,
    /// Reshuffle the whole context after each addition instead of appending.
    #[serde(default)]
    pub shuffle_each_step: bool,
    /// Seed for random sampling and reshuffles.
    #[serde(default)]
    pub seed: u64,
}

fn default_schedule() -> Vec<usize> {
    vec![32, 64, 128, 256]
}

fn default_min_separation() -> f64 {
    2.0
}

fn default_oracle_size() -> usize {
    1024
}

fn default_grid() -> usize {
    50
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            schedule: default_schedule(),
            min_separation: default_min_separation(),
            oracle_train_size: default_oracle_size(),
            policy: Policy::Active,
            grid_g: default_grid(),
            shuffle_each_step: false,
            seed: 0,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Config("active schedule is empty".into()));
        }
        if self.schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("active schedule {:?} is not strictly increasing", self.schedule)));
        }
        if !(self.min_separation >= 0.0) {
            return Err(Error::Config(format!("min_separation must be >= 0, got {}", self.min_separation)));
        }
        if self.grid_g < 2 {
            return Err(Error::Config(format!("grid size must be >= 2, got {}", self.grid_g)));
        }
        Ok(())
    }
}

/// A grid cell added to the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPoint {
    pub i: usize,
    pub j: usize,
    /// Coordinates in the backend's space.
    pub point: Point,
    pub raw: Point,
    pub entropy: Option<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub context: Vec<Example>,
    pub map: DecisionMap,
    pub accuracy: f64,
    pub selected: Vec<SelectedPoint>,
    pub requested: usize,
    /// The spacing constraint ran out of candidates before `requested`.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub policy: Policy,
    pub schedule: Vec<usize>,
    pub oracle_train_accuracy: Option<f64>,
    pub steps: Vec<TrajectoryStep>,
}

/// Fits the logistic-regression oracle on `size` fresh draws of `spec`.
/// Returns the model and its training accuracy.
pub fn train_oracle(spec: &TaskSpec, size: usize, seed: u64) -> Result<(ClassifierModel, f64)> {
    let k = spec.num_classes;
    let mut fresh = spec.clone();
    fresh.n_points = size - size % k;
    fresh.seed = derive_seed(seed, ORACLE);
    let task = generate(&fresh)?;
    let data = Dataset::new(
        task.points.iter().map(|p| p.raw).collect(),
        task.points.iter().map(|p| p.y).collect(),
        k,
    )?;
    let (model, _) = baselines::fit(&BaselineSpec::logreg(), &data)?;
    let accuracy = model.accuracy(&data);
    if accuracy < 1.0 {
        log::warn!("oracle training accuracy is {accuracy:.4}, not 1.0; its labels are imperfect");
    }
    Ok((model, accuracy))
}

/// Result of [`select_uncertain`]: flat cell indices in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub cells: Vec<usize>,
    pub exhausted: bool,
}

/// Greedy pick of up to `k` highest-entropy cells, each at least
/// `min_separation` grid units from the ones already taken. Equal
/// entropies go in flat-index order.
pub fn select_uncertain(map: &DecisionMap, k: usize, min_separation: f64) -> Result<Selection> {
    if !map.has_entropy() {
        return Err(Error::NoUncertaintySignal);
    }
    let mut candidates: Vec<(f64, usize)> =
        map.cells.iter().enumerate().filter_map(|(idx, c)| c.entropy.map(|h| (h, idx))).collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let g = map.grid.g;
    let mut cells: Vec<usize> = Vec::with_capacity(k);
    for (_, idx) in candidates {
        if cells.len() == k {
            break;
        }
        let (i, j) = (idx % g, idx / g);
        let far = cells.iter().all(|&s| {
            let (si, sj) = (s % g, s / g);
            let d2 = (i as f64 - si as f64).powi(2) + (j as f64 - sj as f64).powi(2);
            d2.sqrt() >= min_separation
        });
        if far {
            cells.push(idx);
        }
    }
    Ok(Selection {
        exhausted: cells.len() < k,
        cells,
    })
}

fn context_of(task: &TaskInstance, space: crate::taskgen::CoordSpace, n: usize) -> Result<Vec<Example>> {
    let all = task.context_examples(space);
    if all.len() < n {
        return Err(Error::Size(format!("task has {} context points, the schedule starts at {n}", all.len())));
    }
    Ok(all[..n].to_vec())
}

/// Runs the loop over `cfg.schedule`.
///
/// The initial context is the first `schedule[0]` context points of `task`;
/// accuracy is measured on its test split. On failure the error carries the
/// steps completed so far.
pub fn run_loop(
    backend: &dyn Backend,
    task: &TaskInstance,
    prompt: &PromptConfig,
    cfg: &ActiveConfig,
    oracle: &ClassifierModel,
) -> Result<Trajectory> {
    cfg.validate()?;
    let space = backend.space();
    let labels = make_label_map(prompt)?;
    let test = task.test_examples(space);
    let mut context = context_of(task, space, cfg.schedule[0])?;
    let grid = build_grid(&context.iter().map(|e| e.x).collect::<Vec<_>>(), cfg.grid_g)?;
    let mut rng = substream(cfg.seed, RANDOM_SAMPLING);
    let mut trajectory = Trajectory {
        policy: cfg.policy,
        schedule: cfg.schedule.clone(),
        oracle_train_accuracy: None,
        steps: Vec::new(),
    };

    for t in 0..cfg.schedule.len() {
        let step = (|| -> Result<TrajectoryStep> {
            let ctx = ProbeContext::new(&context, prompt, &labels)?;
            let mut map = probe_map(backend, &ctx, &grid)?;
            let accuracy = if test.is_empty() { f64::NAN } else { test_accuracy(backend, &ctx, &test)? };
            map.accuracy = Some(accuracy);
            let Some(&next) = cfg.schedule.get(t + 1) else {
                return Ok(TrajectoryStep {
                    context: context.clone(),
                    map,
                    accuracy,
                    selected: Vec::new(),
                    requested: 0,
                    exhausted: false,
                });
            };
            let want = next.saturating_sub(context.len());
            let (cells, exhausted) = match cfg.policy {
                Policy::Active => {
                    let s = select_uncertain(&map, want, cfg.min_separation)?;
                    (s.cells, s.exhausted)
                }
                Policy::Random => {
                    let n = want.min(grid.len());
                    (sample(&mut rng, grid.len(), n).into_vec(), n < want)
                }
            };
            let selected = cells
                .into_iter()
                .map(|idx| {
                    let (i, j) = grid.cell(idx);
                    let point = grid.point(i, j);
                    let raw = task.to_raw(space, point);
                    SelectedPoint {
                        i,
                        j,
                        point,
                        raw,
                        entropy: map.cells[idx].entropy,
                        label: oracle.predict(raw),
                    }
                })
                .collect();
            Ok(TrajectoryStep {
                context: context.clone(),
                map,
                accuracy,
                selected,
                requested: want,
                exhausted,
            })
        })();
        let step = match step {
            Ok(s) => s,
            Err(source) => {
                return Err(Error::ActiveLoop {
                    source: Box::new(source),
                    partial: Box::new(trajectory),
                })
            }
        };
        context.extend(step.selected.iter().map(|s| Example { x: s.point, y: s.label }));
        if cfg.shuffle_each_step {
            context = permute_context(&context, derive_seed(cfg.seed, &format!("step-{t}")));
        }
        trajectory.steps.push(step);
    }
    Ok(trajectory)
}

/// Generates the task, trains the oracle and runs the loop.
pub fn run_for_task(
    backend: &dyn Backend,
    task: &TaskInstance,
    prompt: &PromptConfig,
    cfg: &ActiveConfig,
) -> Result<Trajectory> {
    let (oracle, acc) = train_oracle(&task.spec, cfg.oracle_train_size, task.spec.seed)?;
    let mut trajectory = run_loop(backend, task, prompt, cfg, &oracle)?;
    trajectory.oracle_train_accuracy = Some(acc);
    Ok(trajectory)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestStep {
    n_context: usize,
    accuracy: f64,
    map_file: String,
    requested: usize,
    exhausted: bool,
    selected: Vec<SelectedPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    policy: Policy,
    schedule: Vec<usize>,
    oracle_train_accuracy: Option<f64>,
    steps: Vec<ManifestStep>,
}

impl Trajectory {
    /// Writes `manifest.json` and one map file per step into `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut steps = Vec::with_capacity(self.steps.len());
        for (t, step) in self.steps.iter().enumerate() {
            let name = format!("step_{t:02}_n{}.map", step.context.len());
            step.map.save(dir.join(&name))?;
            steps.push(ManifestStep {
                n_context: step.context.len(),
                accuracy: step.accuracy,
                map_file: name,
                requested: step.requested,
                exhausted: step.exhausted,
                selected: step.selected.clone(),
            });
        }
        let manifest = Manifest {
            policy: self.policy,
            schedule: self.schedule.clone(),
            oracle_train_accuracy: self.oracle_train_accuracy,
            steps,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn context_sizes(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.context.len()).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.accuracy).collect()
    }
}

/// The decision map of a fitted classifier on `grid`, for points given in
/// `space` coordinates of `task`.
pub fn model_map(model: &ClassifierModel, task: &TaskInstance, space: crate::taskgen::CoordSpace, grid: &GridSpec) -> Result<DecisionMap> {
    let raw: Vec<Point> = grid.points().into_iter().map(|p| task.to_raw(space, p)).collect();
    let labels = model.predict_many(&raw).into_iter().map(Some).collect();
    let mut map = DecisionMap::from_labels(*grid, model.num_classes(), labels)?;
    map.space = space;
    Ok(map)
}
