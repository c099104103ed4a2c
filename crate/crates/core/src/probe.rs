//! Query grids and decision maps.
//!
//! A [`GridSpec`] spans the bounding box of a context set with `G` evenly
//! spaced points per dimension. Cell `(i, j)` sits at
//! `x_min + (i·Δx₀, j·Δx₁)` and is stored at flat index `j·G + i`, so rows
//! run along dimension 1.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{classify_batch, Backend, BackendError, ProbeContext};
use crate::promptfmt::{make_label_map, PromptConfig};
use crate::taskgen::{CoordSpace, Example};
use crate::{hashing, Error, Point, Result};

/// Maps with a larger share of abstaining cells are reported as degraded.
pub const MAX_ABSTAIN_FRACTION: f64 = 0.1;
/// Tolerance when checking that probabilities lie on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: Point,
    pub x_max: Point,
    pub g: usize,
    pub dx: Point,
}

impl GridSpec {
    pub fn new(x_min: Point, x_max: Point, g: usize) -> Result<Self> {
        if g < 2 {
            return Err(Error::Param(format!("grid needs G >= 2, got {g}")));
        }
        for d in 0..2 {
            if !(x_max[d] > x_min[d]) || !x_min[d].is_finite() || !x_max[d].is_finite() {
                return Err(Error::Param(format!(
                    "grid bounds must satisfy x_min < x_max, got {} and {} in dimension {d}",
                    x_min[d], x_max[d]
                )));
            }
        }
        let step = (g - 1) as f64;
        Ok(GridSpec {
            x_min,
            x_max,
            g,
            dx: [(x_max[0] - x_min[0]) / step, (x_max[1] - x_min[1]) / step],
        })
    }

    pub fn len(&self) -> usize {
        self.g * self.g
    }

    pub fn is_empty(&self) -> bool {
        self.g == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.g + i
    }

    /// `(i, j)` of a flat index.
    pub fn cell(&self, idx: usize) -> (usize, usize) {
        (idx % self.g, idx / self.g)
    }

    pub fn point(&self, i: usize, j: usize) -> Point {
        [self.x_min[0] + i as f64 * self.dx[0], self.x_min[1] + j as f64 * self.dx[1]]
    }

    /// Every grid point in flat-index order.
    pub fn points(&self) -> Vec<Point> {
        (0..self.len())
            .map(|idx| {
                let (i, j) = self.cell(idx);
                self.point(i, j)
            })
            .collect()
    }

    pub fn fingerprint(&self) -> String {
        hashing::fingerprint(self)
    }
}

/// Grid over the per-dimension extrema of `points`. A dimension in which
/// every point agrees is widened by ±0.5.
pub fn build_grid(points: &[Point], g: usize) -> Result<GridSpec> {
    if points.is_empty() {
        return Err(Error::Size("cannot build a grid over an empty context".into()));
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    for d in 0..2 {
        if !(hi[d] > lo[d]) {
            log::warn!("context is degenerate in dimension {d} (all values {}); widening by 0.5", lo[d]);
            lo[d] -= 0.5;
            hi[d] += 0.5;
        }
    }
    GridSpec::new(lo, hi, g)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_of(probs: &[f64]) -> Result<f64> {
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < -SIMPLEX_TOL || *p > 1.0 + SIMPLEX_TOL) || (total - 1.0).abs() > SIMPLEX_TOL
    {
        return Err(Error::Domain(format!("{probs:?} is not a probability vector")));
    }
    Ok(-probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    /// `None` when the backend abstained.
    pub label: Option<usize>,
    pub probs: Option<Vec<f64>>,
    pub entropy: Option<f64>,
}

impl MapCell {
    pub fn abstain() -> Self {
        MapCell {
            label: None,
            probs: None,
            entropy: None,
        }
    }

    pub fn labelled(label: usize) -> Self {
        MapCell {
            label: Some(label),
            probs: None,
            entropy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMap {
    pub grid: GridSpec,
    pub space: CoordSpace,
    pub num_classes: usize,
    pub label_names: Vec<String>,
    /// Flat-index order, see [`GridSpec::index`].
    pub cells: Vec<MapCell>,
    pub context: Vec<Example>,
    pub context_fingerprint: String,
    pub backend_fingerprint: String,
    #[serde(default)]
    pub backend_name: String,
    #[serde(default)]
    pub accuracy: Option<f64>,
}

impl DecisionMap {
    /// A map with only labels; handy for metrics and tests.
    pub fn from_labels(grid: GridSpec, num_classes: usize, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::Size(format!("{} labels for a {}-cell grid", labels.len(), grid.len())));
        }
        Ok(DecisionMap {
            grid,
            space: CoordSpace::Raw,
            num_classes,
            label_names: (0..num_classes).map(|c| c.to_string()).collect(),
            cells: labels.into_iter().map(|l| l.map_or_else(MapCell::abstain, MapCell::labelled)).collect(),
            context: Vec::new(),
            context_fingerprint: String::new(),
            backend_fingerprint: String::new(),
            backend_name: String::new(),
            accuracy: None,
        })
    }

    pub fn g(&self) -> usize {
        self.grid.g
    }

    pub fn label(&self, i: usize, j: usize) -> Option<usize> {
        self.cells[self.grid.index(i, j)].label
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.cells.iter().map(|c| c.label).collect()
    }

    pub fn abstain_count(&self) -> usize {
        self.cells.iter().filter(|c| c.label.is_none()).count()
    }

    pub fn abstain_fraction(&self) -> f64 {
        self.abstain_count() as f64 / self.cells.len() as f64
    }

    /// True when at least one cell carries an entropy value.
    pub fn has_entropy(&self) -> bool {
        self.cells.iter().any(|c| c.entropy.is_some())
    }

    pub fn entropies(&self) -> Vec<Option<f64>> {
        self.cells.iter().map(|c| c.entropy).collect()
    }

    /// Content hash of everything but the accuracy annotation.
    pub fn fingerprint(&self) -> String {
        hashing::fingerprint(&(&self.grid, self.space, &self.cells, &self.context_fingerprint, &self.backend_fingerprint))
    }

    /// Writes the map file: one JSON header line, then CSV rows
    /// `i,j,x0,x1,label,p0..p{K-1},entropy` with empty fields where a value is missing.
    pub fn to_map_string(&self) -> Result<String> {
        let header = MapHeader {
            grid: self.grid,
            space: self.space,
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
            context_fingerprint: self.context_fingerprint.clone(),
            backend_fingerprint: self.backend_fingerprint.clone(),
            backend_name: self.backend_name.clone(),
            accuracy: self.accuracy,
            context: self.context.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        out.push_str("i,j,x0,x1,label");
        for c in 0..self.num_classes {
            let _ = write!(out, ",p{c}");
        }
        out.push_str(",entropy\n");
        for (idx, cell) in self.cells.iter().enumerate() {
            let (i, j) = self.grid.cell(idx);
            let p = self.grid.point(i, j);
            let _ = write!(out, "{i},{j},{},{},", p[0], p[1]);
            if let Some(l) = cell.label {
                let _ = write!(out, "{l}");
            }
            for c in 0..self.num_classes {
                out.push(',');
                if let Some(probs) = &cell.probs {
                    let _ = write!(out, "{}", probs[c]);
                }
            }
            out.push(',');
            if let Some(h) = cell.entropy {
                let _ = write!(out, "{h}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_map_str(text: &str) -> Result<Self> {
        Self::read_map(BufReader::new(text.as_bytes()))
    }

    pub fn read_map(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = lines.next().ok_or_else(|| Error::Format("empty map file".into()))??;
        let header: MapHeader = serde_json::from_str(&header_line)?;
        let _columns = lines.next().ok_or_else(|| Error::Format("map file lacks a CSV header".into()))??;
        let k = header.num_classes;
        let mut cells = vec![MapCell::abstain(); header.grid.len()];
        let mut seen = 0usize;
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 + k {
                return Err(Error::Format(format!("row {n}: expected {} fields, got {}", 6 + k, fields.len())));
            }
            let bad = |what: &str| Error::Format(format!("row {n}: bad {what}"));
            let i: usize = fields[0].parse().map_err(|_| bad("i"))?;
            let j: usize = fields[1].parse().map_err(|_| bad("j"))?;
            if i >= header.grid.g || j >= header.grid.g {
                return Err(bad("cell index"));
            }
            let label = match fields[4] {
                "" => None,
                s => Some(s.parse::<usize>().map_err(|_| bad("label"))?),
            };
            let probs = if fields[5..5 + k].iter().all(|f| f.is_empty()) {
                None
            } else {
                Some(
                    fields[5..5 + k]
                        .iter()
                        .map(|f| f.parse::<f64>().map_err(|_| bad("probability")))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            let entropy = match fields[5 + k] {
                "" => None,
                s => Some(s.parse::<f64>().map_err(|_| bad("entropy"))?),
            };
            cells[header.grid.index(i, j)] = MapCell { label, probs, entropy };
            seen += 1;
        }
        if seen != header.grid.len() {
            return Err(Error::Format(format!("expected {} rows, got {seen}", header.grid.len())));
        }
        Ok(DecisionMap {
            grid: header.grid,
            space: header.space,
            num_classes: k,
            label_names: header.label_names,
            cells,
            context: header.context,
            context_fingerprint: header.context_fingerprint,
            backend_fingerprint: header.backend_fingerprint,
            backend_name: header.backend_name,
            accuracy: header.accuracy,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_map_string()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_map(BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapHeader {
    grid: GridSpec,
    space: CoordSpace,
    num_classes: usize,
    label_names: Vec<String>,
    context_fingerprint: String,
    backend_fingerprint: String,
    #[serde(default)]
    backend_name: String,
    #[serde(default)]
    accuracy: Option<f64>,
    #[serde(default)]
    context: Vec<Example>,
}

/// Queries `backend` on every grid cell.
///
/// Cells where the backend fails become abstains. Fails with the backend's
/// error when every cell is unavailable, and with [`Error::ProbeDegraded`]
/// (carrying the map) when more than [`MAX_ABSTAIN_FRACTION`] abstain.
pub fn probe_map(backend: &dyn Backend, ctx: &ProbeContext<'_>, grid: &GridSpec) -> Result<DecisionMap> {
    let results = classify_batch(backend, ctx, &grid.points());
    let mut cells = Vec::with_capacity(results.len());
    let mut unavailable = 0usize;
    let mut first_error: Option<BackendError> = None;
    for r in results {
        match r {
            Ok(pred) => {
                let entropy = if pred.logits.genuine() { Some(entropy_of(&pred.probs)?) } else { None };
                cells.push(MapCell {
                    label: Some(pred.class),
                    probs: Some(pred.probs),
                    entropy,
                });
            }
            Err(e) => {
                if matches!(e, BackendError::Unavailable(_)) {
                    unavailable += 1;
                }
                first_error.get_or_insert(e);
                cells.push(MapCell::abstain());
            }
        }
    }
    if unavailable == cells.len() {
        return Err(first_error.expect("a grid has cells").into());
    }
    let map = DecisionMap {
        grid: *grid,
        space: backend.space(),
        num_classes: ctx.num_classes(),
        label_names: ctx.labels.labels.clone(),
        cells,
        context: ctx.examples.to_vec(),
        context_fingerprint: ctx.fingerprint(),
        backend_fingerprint: backend.fingerprint(),
        backend_name: backend.descriptor().name.clone(),
        accuracy: None,
    };
    let fraction = map.abstain_fraction();
    if let Some(e) = first_error {
        log::warn!("{} of {} cells abstained; first failure: {e}", map.abstain_count(), map.cells.len());
    }
    if fraction > MAX_ABSTAIN_FRACTION {
        return Err(Error::ProbeDegraded {
            abstain_fraction: fraction,
            map: Box::new(map),
        });
    }
    Ok(map)
}

/// Builds the label map, context and grid, then probes. `examples` must
/// already be in the backend's coordinate space.
pub fn probe_examples(backend: &dyn Backend, examples: &[Example], prompt: &PromptConfig, g: usize) -> Result<DecisionMap> {
    let labels = make_label_map(prompt)?;
    let ctx = ProbeContext::new(examples, prompt, &labels)?;
    let points: Vec<Point> = examples.iter().map(|e| e.x).collect();
    let grid = build_grid(&points, g)?;
    probe_map(backend, &ctx, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockReply, MockScript};
    use crate::backend::{BackendDescriptor, BackendKind};
    use proptest::prelude::*;

    fn script_backend(script: MockScript) -> MockBackend {
        let mut desc = BackendDescriptor::new("mock", BackendKind::Mock);
        desc.params = serde_json::to_value(script).unwrap();
        MockBackend::from_descriptor(desc).unwrap()
    }

    fn corner_context() -> Vec<Example> {
        vec![
            Example { x: [0.0, 0.0], y: 0 },
            Example { x: [100.0, 100.0], y: 1 },
            Example { x: [0.0, 100.0], y: 0 },
            Example { x: [100.0, 0.0], y: 1 },
        ]
    }

    #[test]
    fn fifty_by_fifty_is_2500_points() {
        let grid = build_grid(&[[0.0, 0.0], [1.0, 1.0]], 50).unwrap();
        assert_eq!(grid.points().len(), 2500);
    }

    #[test]
    fn grid_arithmetic() {
        let grid = GridSpec::new([0.0, 0.0], [98.0, 49.0], 50).unwrap();
        assert_eq!(grid.dx, [2.0, 1.0]);
        assert_eq!(grid.point(1, 3), [2.0, 3.0]);
        assert_eq!(grid.index(1, 3), 3 * 50 + 1);
        assert_eq!(grid.cell(grid.index(1, 3)), (1, 3));
    }

    #[test]
    fn two_by_two_grid_is_the_bounding_box_corners() {
        let grid = build_grid(&[[1.0, 5.0], [3.0, -2.0], [2.0, 0.0]], 2).unwrap();
        assert_eq!(grid.points(), vec![[1.0, -2.0], [3.0, -2.0], [1.0, 5.0], [3.0, 5.0]]);
    }

    #[test]
    fn single_point_is_widened() {
        let grid = build_grid(&[[4.0, 7.0]], 3).unwrap();
        assert_eq!(grid.x_min, [3.5, 6.5]);
        assert_eq!(grid.x_max, [4.5, 7.5]);
    }

    #[test]
    fn invalid_grids() {
        assert!(build_grid(&[], 50).is_err());
        assert!(GridSpec::new([0.0, 0.0], [1.0, 1.0], 1).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_of(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropy_of(&[1.0, 0.0]).unwrap(), 0.0);
        let direct = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((entropy_of(&[0.9, 0.1]).unwrap() - direct).abs() < 1e-15);
        assert!((entropy_of(&[0.9, 0.1]).unwrap() - 0.32508).abs() < 1e-5);
        assert!(matches!(entropy_of(&[0.6, 0.6]), Err(Error::Domain(_))));
        assert!(matches!(entropy_of(&[1.1, -0.1]), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn entropy_is_bounded(raw in prop::collection::vec(0.0f64..1.0, 2..6)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let h = entropy_of(&p).unwrap();
            let max = (p.len() as f64).ln();
            prop_assert!(h >= 0.0 && h <= max + 1e-12);
        }

        #[test]
        fn grid_points_are_reproducible(lo0 in -50.0f64..50.0, lo1 in -50.0f64..50.0, w0 in 0.1f64..100.0, w1 in 0.1f64..100.0, g in 2usize..60) {
            let grid = GridSpec::new([lo0, lo1], [lo0 + w0, lo1 + w1], g).unwrap();
            let points = grid.points();
            for (idx, p) in points.iter().enumerate() {
                let (i, j) = grid.cell(idx);
                prop_assert_eq!(grid.point(i, j), *p);
                prop_assert_eq!(p[0].to_bits(), (lo0 + i as f64 * grid.dx[0]).to_bits());
            }
        }
    }

    #[test]
    fn threshold_mock_splits_the_grid_in_half() {
        let backend = script_backend(MockScript::Threshold {
            dim: 0,
            at: 50.0,
            sharpness: 0.2,
        });
        let map = probe_examples(&backend, &corner_context(), &PromptConfig::new(["Foo", "Bar"]), 50).unwrap();
        for j in 0..50 {
            for i in 0..50 {
                assert_eq!(map.label(i, j), Some(usize::from(i >= 25)), "cell ({i}, {j})");
            }
        }
        assert!(map.has_entropy());
    }

    #[test]
    fn constant_mock_is_uniform_with_zero_entropy() {
        let backend = script_backend(MockScript::Constant { class: 1 });
        let map = probe_examples(&backend, &corner_context(), &PromptConfig::new(["Foo", "Bar"]), 20).unwrap();
        assert!(map.cells.iter().all(|c| c.label == Some(1) && c.entropy == Some(0.0)));
    }

    #[test]
    fn generation_mode_maps_have_no_entropy() {
        let mut desc = BackendDescriptor::new("gen", BackendKind::Mock);
        desc.mode = crate::backend::Mode::Generation;
        desc.params = serde_json::to_value(MockScript::Threshold {
            dim: 1,
            at: 50.0,
            sharpness: 1.0,
        })
        .unwrap();
        let backend = MockBackend::from_descriptor(desc).unwrap();
        let map = probe_examples(&backend, &corner_context(), &PromptConfig::new(["Foo", "Bar"]), 10).unwrap();
        assert!(!map.has_entropy());
        assert_eq!(map.abstain_count(), 0);
    }

    #[test]
    fn too_many_abstains_degrade_the_probe() {
        let backend = MockBackend::new("flaky", |_, q| {
            if q[0] < 30.0 {
                MockReply::Fail(BackendError::NoLabelSignal)
            } else {
                MockReply::TopTokens(vec![("Foo".into(), -0.1)])
            }
        });
        match probe_examples(&backend, &corner_context(), &PromptConfig::new(["Foo", "Bar"]), 10) {
            Err(Error::ProbeDegraded { abstain_fraction, map }) => {
                assert!((abstain_fraction - 0.3).abs() < 1e-12);
                assert_eq!(map.abstain_count(), 30);
            }
            other => panic!("expected a degraded probe, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_backend_is_an_error() {
        let backend = MockBackend::new("down", |_, _| MockReply::Fail(BackendError::Unavailable("refused".into())));
        let err = probe_examples(&backend, &corner_context(), &PromptConfig::new(["Foo", "Bar"]), 5).unwrap_err();
        assert!(matches!(err, Error::Backend(BackendError::Unavailable(_))));
    }

    #[test]
    fn probing_is_deterministic() {
        let backend = script_backend(MockScript::NearestCentroid { temperature: 100.0 });
        let cfg = PromptConfig::new(["Foo", "Bar"]);
        let a = probe_examples(&backend, &corner_context(), &cfg, 25).unwrap();
        let b = probe_examples(&backend, &corner_context(), &cfg, 25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn map_file_round_trip() {
        let backend = script_backend(MockScript::NearestCentroid { temperature: 100.0 });
        let mut map = probe_examples(&backend, &corner_context(), &PromptConfig::new(["Foo", "Bar"]), 12).unwrap();
        map.cells[7] = MapCell::abstain();
        map.accuracy = Some(0.75);
        let text = map.to_map_string().unwrap();
        assert!(text.lines().nth(1).unwrap() == "i,j,x0,x1,label,p0,p1,entropy");
        let back = DecisionMap::from_map_str(&text).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn probed_queries_match_grid_coordinates() {
        let seen = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = seen.clone();
        let backend = MockBackend::new("rec", move |_, q| {
            log.lock().unwrap().push(q);
            MockReply::TopTokens(vec![("Foo".into(), -0.1)])
        })
        .with_space(CoordSpace::Raw)
        .with_max_in_flight(1);
        let ctx = vec![Example { x: [0.1, -3.0], y: 0 }, Example { x: [7.3, 2.2], y: 1 }];
        let cfg = PromptConfig::new(["Foo", "Bar"]).with_integer_mode(false);
        let labels = make_label_map(&cfg).unwrap();
        let pctx = ProbeContext::new(&ctx, &cfg, &labels).unwrap();
        let grid = build_grid(&[[0.1, -3.0], [7.3, 2.2]], 9).unwrap();
        probe_map(&backend, &pctx, &grid).unwrap();
        let queried = seen.lock().unwrap().clone();
        for (idx, q) in queried.iter().enumerate() {
            let (i, j) = grid.cell(idx);
            assert_eq!(q.map(f64::to_bits), grid.point(i, j).map(f64::to_bits));
        }
    }
}
