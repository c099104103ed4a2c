//! Synthetic 2-D classification tasks.
//!
//! Three families: Gaussian clusters on the vertices of a square
//! (`linear`), two concentric circles (`circle`) and two interleaving half
//! circles (`moon`). Every generator is a pure function of its [`TaskSpec`].

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Linear,
    Circle,
    Moon,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Linear, TaskKind::Circle, TaskKind::Moon];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Linear => "linear",
            TaskKind::Circle => "circle",
            TaskKind::Moon => "moon",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TaskKind::Linear),
            "circle" | "circles" => Ok(TaskKind::Circle),
            "moon" | "moons" => Ok(TaskKind::Moon),
            other => Err(Error::Param(format!("unknown task kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngleSpacing {
    #[default]
    Even,
    Random,
}

/// Closed-open parameter intervals a regime draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeRanges {
    pub class_sep: (f64, f64),
    pub factor: (f64, f64),
    pub moon_noise: (f64, f64),
}

impl Regime {
    pub fn ranges(self) -> RegimeRanges {
        match self {
            Regime::Train => RegimeRanges {
                class_sep: (1.5, 2.0),
                factor: (0.1, 0.4),
                moon_noise: (0.05, 0.1),
            },
            Regime::Test => RegimeRanges {
                class_sep: (1.0, 1.4),
                factor: (0.5, 0.9),
                moon_noise: (0.1, 0.2),
            },
        }
    }
}

pub const DEFAULT_CLUSTER_STD: f64 = 0.3;
pub const DEFAULT_CIRCLE_NOISE: f64 = 0.05;

fn default_cluster_std() -> f64 {
    DEFAULT_CLUSTER_STD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub num_classes: usize,
    pub n_points: usize,
    #[serde(default)]
    pub class_sep: f64,
    #[serde(default)]
    pub factor: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_cluster_std")]
    pub cluster_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub angles: AngleSpacing,
}

impl TaskSpec {
    pub fn linear(num_classes: usize, n_points: usize, class_sep: f64, seed: u64) -> Self {
        TaskSpec {
            kind: TaskKind::Linear,
            num_classes,
            n_points,
            class_sep,
            factor: 0.0,
            noise: 0.0,
            cluster_std: DEFAULT_CLUSTER_STD,
            seed,
            regime: Regime::Train,
            angles: AngleSpacing::Even,
        }
    }

    pub fn circle(n_points: usize, factor: f64, noise: f64, seed: u64) -> Self {
        TaskSpec {
            kind: TaskKind::Circle,
            num_classes: 2,
            n_points,
            class_sep: 0.0,
            factor,
            noise,
            cluster_std: DEFAULT_CLUSTER_STD,
            seed,
            regime: Regime::Train,
            angles: AngleSpacing::Even,
        }
    }

    pub fn moon(n_points: usize, noise: f64, seed: u64) -> Self {
        TaskSpec {
            kind: TaskKind::Moon,
            num_classes: 2,
            n_points,
            class_sep: 0.0,
            factor: 0.0,
            noise,
            cluster_std: DEFAULT_CLUSTER_STD,
            seed,
            regime: Regime::Train,
            angles: AngleSpacing::Even,
        }
    }

    /// Draws the kind's free parameter from the regime's interval.
    ///
    /// Circle noise is not regime-controlled and stays at
    /// [`DEFAULT_CIRCLE_NOISE`].
    pub fn draw(kind: TaskKind, num_classes: usize, n_points: usize, regime: Regime, seed: u64) -> Self {
        let ranges = regime.ranges();
        let mut rng = rng::substream(seed, rng::TASK_PARAMS);
        let mut spec = match kind {
            TaskKind::Linear => {
                let sep = rng.random_range(ranges.class_sep.0..ranges.class_sep.1);
                TaskSpec::linear(num_classes, n_points, sep, seed)
            }
            TaskKind::Circle => {
                let factor = rng.random_range(ranges.factor.0..ranges.factor.1);
                TaskSpec::circle(n_points, factor, DEFAULT_CIRCLE_NOISE, seed)
            }
            TaskKind::Moon => {
                let noise = rng.random_range(ranges.moon_noise.0..ranges.moon_noise.1);
                TaskSpec::moon(n_points, noise, seed)
            }
        };
        spec.regime = regime;
        spec
    }
}

/// Coordinate frame a consumer works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoordSpace {
    /// Generator coordinates.
    Raw,
    /// Coordinates after [`scale_to_prompt_space`].
    #[default]
    Prompt,
}

/// A labelled example in whatever frame the consumer uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Point,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub raw: Point,
    pub scaled: Point,
    pub y: usize,
}

impl LabeledPoint {
    pub fn coords(&self, space: CoordSpace) -> Point {
        match space {
            CoordSpace::Raw => self.raw,
            CoordSpace::Prompt => self.scaled,
        }
    }
}

/// Per-dimension affine map from raw coordinates into prompt space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptScale {
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
    pub min: Point,
    pub max: Point,
}

impl PromptScale {
    fn degenerate(&self, d: usize) -> bool {
        !(self.max[d] > self.min[d])
    }

    pub fn forward(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for d in 0..2 {
            let v = if self.degenerate(d) {
                0.5 * (self.lo + self.hi)
            } else {
                self.lo + (p[d] - self.min[d]) / (self.max[d] - self.min[d]) * (self.hi - self.lo)
            };
            out[d] = if self.integer { v.round() } else { v };
        }
        out
    }

    /// Maps prompt-space coordinates back to raw space (no rounding).
    pub fn inverse(&self, q: Point) -> Point {
        let mut out = [0.0; 2];
        for d in 0..2 {
            out[d] = if self.degenerate(d) {
                self.min[d]
            } else {
                self.min[d] + (q[d] - self.lo) / (self.hi - self.lo) * (self.max[d] - self.min[d])
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub spec: TaskSpec,
    pub points: Vec<LabeledPoint>,
    /// Context indices in prompt order.
    pub context: Vec<usize>,
    pub test: Vec<usize>,
    pub scale: Option<PromptScale>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TaskInstance {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn examples(&self, indices: &[usize], space: CoordSpace) -> Vec<Example> {
        indices
            .iter()
            .map(|&i| {
                let p = &self.points[i];
                Example { x: p.coords(space), y: p.y }
            })
            .collect()
    }

    pub fn context_examples(&self, space: CoordSpace) -> Vec<Example> {
        self.examples(&self.context, space)
    }

    pub fn test_examples(&self, space: CoordSpace) -> Vec<Example> {
        self.examples(&self.test, space)
    }

    /// Maps a point in `space` back to raw coordinates.
    pub fn to_raw(&self, space: CoordSpace, p: Point) -> Point {
        match (space, &self.scale) {
            (CoordSpace::Prompt, Some(scale)) => scale.inverse(p),
            _ => p,
        }
    }

    /// Maps a raw point into `space`.
    pub fn from_raw(&self, space: CoordSpace, p: Point) -> Point {
        match (space, &self.scale) {
            (CoordSpace::Prompt, Some(scale)) => scale.forward(p),
            _ => p,
        }
    }
}

/// Dispatches on `spec.kind`.
pub fn generate(spec: &TaskSpec) -> Result<TaskInstance> {
    match spec.kind {
        TaskKind::Linear => gen_linear(spec),
        TaskKind::Circle => gen_circles(spec),
        TaskKind::Moon => gen_moons(spec),
    }
}

fn check_balance(spec: &TaskSpec) -> Result<usize> {
    if spec.num_classes == 0 || spec.n_points % spec.num_classes != 0 {
        return Err(Error::Balance {
            n_points: spec.n_points,
            num_classes: spec.num_classes,
        });
    }
    Ok(spec.n_points / spec.num_classes)
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn finish(spec: &TaskSpec, mut points: Vec<LabeledPoint>, rng: &mut StreamRng) -> Result<TaskInstance> {
    points.shuffle(rng);
    if points.iter().any(|p| !p.raw.iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical("generator produced a non-finite point".into()));
    }
    Ok(TaskInstance {
        spec: spec.clone(),
        points,
        context: Vec::new(),
        test: Vec::new(),
        scale: None,
        warnings: Vec::new(),
    })
}

fn point(raw: Point, y: usize) -> LabeledPoint {
    LabeledPoint { raw, scaled: raw, y }
}

/// Square vertices in Gray-code order starting at (+,+).
const VERTICES: [Point; 4] = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];

pub fn gen_linear(spec: &TaskSpec) -> Result<TaskInstance> {
    if spec.kind != TaskKind::Linear {
        return Err(Error::Param("gen_linear needs kind = linear".into()));
    }
    if !(2..=4).contains(&spec.num_classes) {
        return Err(Error::UnsupportedClassCount(spec.num_classes));
    }
    let per_class = check_balance(spec)?;
    if !(spec.class_sep > 0.0) {
        return Err(Error::Param(format!("class_sep must be positive, got {}", spec.class_sep)));
    }
    if !(spec.cluster_std >= 0.0) {
        return Err(Error::Param(format!("cluster_std must be non-negative, got {}", spec.cluster_std)));
    }
    let mut rng = rng::substream(spec.seed, rng::TASK_GEN);
    let mut points = Vec::with_capacity(spec.n_points);
    for (class, vertex) in VERTICES.iter().enumerate().take(spec.num_classes) {
        for _ in 0..per_class {
            let x0 = vertex[0] * spec.class_sep + spec.cluster_std * gaussian(&mut rng);
            let x1 = vertex[1] * spec.class_sep + spec.cluster_std * gaussian(&mut rng);
            points.push(point([x0, x1], class));
        }
    }
    finish(spec, points, &mut rng)
}

fn angles(count: usize, span: f64, endpoint: bool, mode: AngleSpacing, rng: &mut StreamRng) -> Vec<f64> {
    match mode {
        AngleSpacing::Even => {
            let steps = if endpoint { count.saturating_sub(1).max(1) } else { count.max(1) };
            (0..count).map(|j| span * j as f64 / steps as f64).collect()
        }
        AngleSpacing::Random => (0..count).map(|_| rng.random_range(0.0..span)).collect(),
    }
}

fn add_noise(points: &mut [LabeledPoint], noise: f64, rng: &mut StreamRng) {
    if noise == 0.0 {
        return;
    }
    for p in points {
        p.raw[0] += noise * gaussian(rng);
        p.raw[1] += noise * gaussian(rng);
        p.scaled = p.raw;
    }
}

pub fn gen_circles(spec: &TaskSpec) -> Result<TaskInstance> {
    if spec.kind != TaskKind::Circle {
        return Err(Error::Param("gen_circles needs kind = circle".into()));
    }
    if spec.num_classes != 2 {
        return Err(Error::UnsupportedClassCount(spec.num_classes));
    }
    if !(spec.factor > 0.0 && spec.factor < 1.0) {
        return Err(Error::Param(format!("factor must lie in (0, 1), got {}", spec.factor)));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Param(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let per_class = check_balance(spec)?;
    let mut rng = rng::substream(spec.seed, rng::TASK_GEN);
    let mut points = Vec::with_capacity(spec.n_points);
    for (class, radius) in [(0usize, 1.0), (1usize, spec.factor)] {
        for t in angles(per_class, 2.0 * PI, false, spec.angles, &mut rng) {
            points.push(point([radius * t.cos(), radius * t.sin()], class));
        }
    }
    add_noise(&mut points, spec.noise, &mut rng);
    finish(spec, points, &mut rng)
}

pub fn gen_moons(spec: &TaskSpec) -> Result<TaskInstance> {
    if spec.kind != TaskKind::Moon {
        return Err(Error::Param("gen_moons needs kind = moon".into()));
    }
    if spec.num_classes != 2 {
        return Err(Error::UnsupportedClassCount(spec.num_classes));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Param(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let per_class = check_balance(spec)?;
    let mut rng = rng::substream(spec.seed, rng::TASK_GEN);
    let mut points = Vec::with_capacity(spec.n_points);
    for t in angles(per_class, PI, true, spec.angles, &mut rng) {
        points.push(point([t.cos(), t.sin()], 0));
    }
    for t in angles(per_class, PI, true, spec.angles, &mut rng) {
        points.push(point([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    add_noise(&mut points, spec.noise, &mut rng);
    finish(spec, points, &mut rng)
}

/// Affinely maps each dimension's observed range onto `[lo, hi]`.
///
/// A constant dimension maps to the midpoint and leaves a warning on the
/// returned task.
pub fn scale_to_prompt_space(task: &TaskInstance, lo: f64, hi: f64, integer: bool) -> TaskInstance {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in &task.points {
        for d in 0..2 {
            min[d] = min[d].min(p.raw[d]);
            max[d] = max[d].max(p.raw[d]);
        }
    }
    let mut out = task.clone();
    for d in 0..2 {
        if !(max[d] > min[d]) {
            out.warnings
                .push(format!("DegenerateDimension: dimension {d} is constant, mapped to midpoint"));
        }
    }
    let scale = PromptScale { lo, hi, integer, min, max };
    for p in &mut out.points {
        p.scaled = scale.forward(p.raw);
    }
    out.scale = Some(scale);
    out
}

/// Default prompt-space scaling: integers in `[0, 100]`.
pub fn scale_default(task: &TaskInstance) -> TaskInstance {
    scale_to_prompt_space(task, 0.0, 100.0, true)
}

/// Draws a class-balanced context set and a disjoint test set.
///
/// Each class's indices are shuffled under the `split` substream; context
/// takes `n_context / K` from the head of every class list and the test
/// set takes its per-class quota from the tail. For a fixed seed the test
/// set therefore does not depend on `n_context` and contexts are nested.
pub fn split_balanced(task: &TaskInstance, n_context: usize, n_test: usize, seed: u64) -> Result<TaskInstance> {
    let k = task.num_classes();
    if n_context % k != 0 {
        return Err(Error::Size(format!("n_context {n_context} is not divisible by {k} classes")));
    }
    if n_context + n_test > task.points.len() {
        return Err(Error::Size(format!(
            "{} context + {} test points requested from {} points",
            n_context,
            n_test,
            task.points.len()
        )));
    }
    let mut rng = rng::substream(seed, rng::SPLIT);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, p) in task.points.iter().enumerate() {
        if p.y >= k {
            return Err(Error::Label { index: p.y, num_classes: k });
        }
        by_class[p.y].push(i);
    }
    for list in &mut by_class {
        list.shuffle(&mut rng);
    }
    let per_class_ctx = n_context / k;
    let mut context = Vec::with_capacity(n_context);
    let mut test = Vec::with_capacity(n_test);
    for (class, list) in by_class.iter().enumerate() {
        let quota = n_test / k + usize::from(class < n_test % k);
        if per_class_ctx + quota > list.len() {
            return Err(Error::Size(format!(
                "class {class} has {} points, needs {} context + {} test",
                list.len(),
                per_class_ctx,
                quota
            )));
        }
        context.extend_from_slice(&list[..per_class_ctx]);
        test.extend_from_slice(&list[list.len() - quota..]);
    }
    context.sort_unstable();
    test.sort_unstable();
    let mut out = task.clone();
    out.context = context;
    out.test = test;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Context,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpPoint {
    pub x: Point,
    pub y: usize,
    pub split: Option<SplitTag>,
}

/// On-disk form of a task: `{spec, points: [{x, y, split}], scale}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDump {
    pub spec: TaskSpec,
    pub points: Vec<DumpPoint>,
    pub scale: Option<PromptScale>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl From<&TaskInstance> for TaskDump {
    fn from(task: &TaskInstance) -> Self {
        let mut tags = vec![None; task.points.len()];
        for &i in &task.context {
            tags[i] = Some(SplitTag::Context);
        }
        for &i in &task.test {
            tags[i] = Some(SplitTag::Test);
        }
        TaskDump {
            spec: task.spec.clone(),
            points: task
                .points
                .iter()
                .zip(tags)
                .map(|(p, split)| DumpPoint { x: p.raw, y: p.y, split })
                .collect(),
            scale: task.scale,
            warnings: task.warnings.clone(),
        }
    }
}

impl TaskDump {
    pub fn into_instance(self) -> Result<TaskInstance> {
        let k = self.spec.num_classes;
        let mut context = Vec::new();
        let mut test = Vec::new();
        let mut points = Vec::with_capacity(self.points.len());
        for (i, p) in self.points.into_iter().enumerate() {
            if p.y >= k {
                return Err(Error::Label { index: p.y, num_classes: k });
            }
            match p.split {
                Some(SplitTag::Context) => context.push(i),
                Some(SplitTag::Test) => test.push(i),
                None => {}
            }
            let scaled = self.scale.map_or(p.x, |s| s.forward(p.x));
            points.push(LabeledPoint { raw: p.x, scaled, y: p.y });
        }
        Ok(TaskInstance {
            spec: self.spec,
            points,
            context,
            test,
            scale: self.scale,
            warnings: self.warnings,
        })
    }
}

pub fn task_to_json(task: &TaskInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TaskDump::from(task))?)
}

pub fn task_from_json(text: &str) -> Result<TaskInstance> {
    serde_json::from_str::<TaskDump>(text)?.into_instance()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_points(task: &TaskInstance, class: usize) -> Vec<Point> {
        task.points.iter().filter(|p| p.y == class).map(|p| p.raw).collect()
    }

    fn mean(points: &[Point]) -> Point {
        let n = points.len() as f64;
        let s = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    }

    #[test]
    fn linear_small_task_is_balanced_and_near_vertices() {
        let task = gen_linear(&TaskSpec::linear(2, 8, 2.0, 0)).unwrap();
        assert_eq!(task.points.len(), 8);
        for (class, vertex) in [[2.0, 2.0], [-2.0, 2.0]].iter().enumerate() {
            let pts = class_points(&task, class);
            assert_eq!(pts.len(), 4);
            let m = mean(&pts);
            let dist = ((m[0] - vertex[0]).powi(2) + (m[1] - vertex[1]).powi(2)).sqrt();
            assert!(dist < 3.0 / 2.0, "class {class} mean {m:?} too far from {vertex:?}");
        }
    }

    // Monte-Carlo: the per-class sample mean over 4 points concentrates at its
    // vertex; a 3/sqrt(4) radius must hold for the overwhelming majority of seeds.
    #[test]
    fn linear_sample_means_concentrate_over_many_seeds() {
        let mut within = 0;
        for seed in 0..1000 {
            let task = gen_linear(&TaskSpec::linear(2, 8, 2.0, seed)).unwrap();
            let ok = [[2.0, 2.0], [-2.0, 2.0]].iter().enumerate().all(|(c, v)| {
                let m = mean(&class_points(&task, c));
                ((m[0] - v[0]).powi(2) + (m[1] - v[1]).powi(2)).sqrt() < 1.5
            });
            within += usize::from(ok);
        }
        assert!(within >= 997, "{within}/1000 seeds within 3/sqrt(4)");
    }

    #[test]
    fn linear_rejects_unbalanced_and_large_k() {
        assert!(matches!(
            gen_linear(&TaskSpec::linear(2, 7, 2.0, 0)),
            Err(Error::Balance { .. })
        ));
        assert!(matches!(
            gen_linear(&TaskSpec::linear(5, 10, 2.0, 0)),
            Err(Error::UnsupportedClassCount(5))
        ));
    }

    #[test]
    fn widely_separated_linear_task_is_nearest_centroid_separable() {
        let task = gen_linear(&TaskSpec::linear(4, 32, 100.0, 3)).unwrap();
        for p in &task.points {
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da = (p.raw[0] - 100.0 * VERTICES[a][0]).powi(2) + (p.raw[1] - 100.0 * VERTICES[a][1]).powi(2);
                    let db = (p.raw[0] - 100.0 * VERTICES[b][0]).powi(2) + (p.raw[1] - 100.0 * VERTICES[b][1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest, p.y);
        }
    }

    #[test]
    fn noiseless_circles_sit_on_their_radii() {
        let task = gen_circles(&TaskSpec::circle(16, 0.5, 0.0, 1)).unwrap();
        for p in &task.points {
            let r = p.raw[0].hypot(p.raw[1]);
            let expected = if p.y == 0 { 1.0 } else { 0.5 };
            assert!((r - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn circles_reject_bad_factor() {
        assert!(matches!(gen_circles(&TaskSpec::circle(16, 1.2, 0.0, 1)), Err(Error::Param(_))));
        assert!(matches!(gen_circles(&TaskSpec::circle(16, 0.0, 0.0, 1)), Err(Error::Param(_))));
    }

    #[test]
    fn noisy_inner_circle_radius_mean() {
        let task = gen_circles(&TaskSpec::circle(200, 0.3, 0.05, 11)).unwrap();
        let radii: Vec<f64> = class_points(&task, 1).iter().map(|p| p[0].hypot(p[1])).collect();
        let m = radii.iter().sum::<f64>() / radii.len() as f64;
        assert!((0.28..=0.32).contains(&m), "mean inner radius {m}");
    }

    #[test]
    fn noiseless_moons_satisfy_circle_equations() {
        let task = gen_moons(&TaskSpec::moon(10, 0.0, 5)).unwrap();
        for p in &task.points {
            let [x, y] = p.raw;
            let residual = if p.y == 0 {
                x * x + y * y - 1.0
            } else {
                (x - 1.0).powi(2) + (y - 0.5).powi(2) - 1.0
            };
            assert!(residual.abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn moons_reject_negative_noise() {
        assert!(matches!(gen_moons(&TaskSpec::moon(10, -0.1, 0)), Err(Error::Param(_))));
    }

    // Brute-force leave-one-out 5-NN on the generated moons.
    #[test]
    fn noisy_moons_are_locally_consistent() {
        let task = gen_moons(&TaskSpec::moon(400, 0.1, 2)).unwrap();
        let pts = &task.points;
        let mut correct = 0;
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| ((p.raw[0] - q.raw[0]).powi(2) + (p.raw[1] - q.raw[1]).powi(2), q.y))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            let ones = d[..5].iter().filter(|(_, y)| *y == 1).count();
            let vote = usize::from(ones >= 3);
            correct += usize::from(vote == p.y);
        }
        let acc = correct as f64 / pts.len() as f64;
        assert!(acc > 0.95, "LOO accuracy {acc}");
    }

    #[test]
    fn scaling_maps_endpoints_and_rounds() {
        let mut task = gen_linear(&TaskSpec::linear(2, 4, 1.0, 0)).unwrap();
        let raw = [[-2.0, 0.0], [2.0, 1.0], [0.0, 0.37], [0.5, 0.5]];
        for (p, r) in task.points.iter_mut().zip(raw) {
            p.raw = r;
        }
        let scaled = scale_to_prompt_space(&task, 0.0, 100.0, true);
        assert_eq!(scaled.points[0].scaled[0], 0.0);
        assert_eq!(scaled.points[1].scaled[0], 100.0);
        assert_eq!(scaled.points[2].scaled[0], 50.0);
        assert_eq!(scaled.points[2].scaled[1], 37.0);
        assert!(scaled.warnings.is_empty());
    }

    #[test]
    fn constant_dimension_maps_to_midpoint_with_warning() {
        let mut task = gen_linear(&TaskSpec::linear(2, 4, 1.0, 0)).unwrap();
        for (i, p) in task.points.iter_mut().enumerate() {
            p.raw = [i as f64, 3.0];
        }
        let scaled = scale_to_prompt_space(&task, 0.0, 100.0, true);
        assert!(scaled.points.iter().all(|p| p.scaled[1] == 50.0));
        assert_eq!(scaled.warnings.len(), 1);
        assert!(scaled.warnings[0].starts_with("DegenerateDimension"));
    }

    #[test]
    fn split_matches_max_context_regime() {
        let task = gen_linear(&TaskSpec::linear(2, 356, 1.5, 0)).unwrap();
        let split = split_balanced(&task, 256, 100, 9).unwrap();
        assert_eq!(split.context.len(), 256);
        assert_eq!(split.test.len(), 100);
        let zeros = split.context.iter().filter(|&&i| task.points[i].y == 0).count();
        assert_eq!(zeros, 128);
        assert!(split.context.iter().all(|i| !split.test.contains(i)));
    }

    #[test]
    fn split_edge_cases() {
        let task = gen_moons(&TaskSpec::moon(200, 0.1, 0)).unwrap();
        let empty = split_balanced(&task, 0, 100, 1).unwrap();
        assert!(empty.context.is_empty());
        assert_eq!(empty.test.len(), 100);
        assert!(matches!(split_balanced(&task, 9, 100, 1), Err(Error::Size(_))));
        assert!(matches!(split_balanced(&task, 150, 100, 1), Err(Error::Size(_))));
    }

    #[test]
    fn splits_are_nested_with_a_fixed_test_set() {
        let task = gen_circles(&TaskSpec::circle(356, 0.3, 0.05, 4)).unwrap();
        let small = split_balanced(&task, 32, 100, 5).unwrap();
        let large = split_balanced(&task, 128, 100, 5).unwrap();
        assert_eq!(small.test, large.test);
        assert!(small.context.iter().all(|i| large.context.contains(i)));
    }

    #[test]
    fn regime_draws_stay_in_their_intervals() {
        for seed in 0..200 {
            let train = TaskSpec::draw(TaskKind::Linear, 2, 8, Regime::Train, seed);
            let test = TaskSpec::draw(TaskKind::Linear, 2, 8, Regime::Test, seed);
            assert!((1.5..2.0).contains(&train.class_sep));
            assert!((1.0..1.4).contains(&test.class_sep));
            let train = TaskSpec::draw(TaskKind::Circle, 2, 8, Regime::Train, seed);
            let test = TaskSpec::draw(TaskKind::Circle, 2, 8, Regime::Test, seed);
            assert!((0.1..0.4).contains(&train.factor));
            assert!((0.5..0.9).contains(&test.factor));
            let train = TaskSpec::draw(TaskKind::Moon, 2, 8, Regime::Train, seed);
            let test = TaskSpec::draw(TaskKind::Moon, 2, 8, Regime::Test, seed);
            assert!((0.05..0.1).contains(&train.noise));
            assert!((0.1..0.2).contains(&test.noise));
        }
    }

    #[test]
    fn dump_round_trips() {
        let task = gen_moons(&TaskSpec::moon(200, 0.1, 3)).unwrap();
        let task = split_balanced(&scale_default(&task), 32, 100, 3).unwrap();
        let text = task_to_json(&task).unwrap();
        assert_eq!(task_from_json(&text).unwrap(), task);
    }
}
