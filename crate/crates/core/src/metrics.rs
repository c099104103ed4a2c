//! Map smoothness, accuracy and sensitivity measures.
//!
//! Neighbourhoods are 4-connected. Abstaining cells count as differing
//! from every neighbour and form regions of their own.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{classify_batch, Backend, ProbeContext};
use crate::probe::DecisionMap;
use crate::taskgen::Example;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetrics {
    pub fragmentation: f64,
    pub region_count: usize,
    pub oracle_disagreement: Option<f64>,
    pub abstain_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_context: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation over `√n_seeds`; absent for a single seed.
    pub standard_error: Option<f64>,
    pub n_seeds: usize,
}

fn same(a: Option<usize>, b: Option<usize>) -> bool {
    matches!((a, b), (Some(x), Some(y)) if x == y)
}

/// Share of 4-neighbour cell pairs whose labels differ.
pub fn fragmentation(map: &DecisionMap) -> f64 {
    let g = map.g();
    let total = 2 * g * (g - 1);
    if total == 0 {
        return 0.0;
    }
    let mut differing = 0usize;
    for j in 0..g {
        for i in 0..g {
            let here = map.label(i, j);
            if i + 1 < g && !same(here, map.label(i + 1, j)) {
                differing += 1;
            }
            if j + 1 < g && !same(here, map.label(i, j + 1)) {
                differing += 1;
            }
        }
    }
    differing as f64 / total as f64
}

/// Number of 4-connected constant-label components.
pub fn region_count(map: &DecisionMap) -> usize {
    let g = map.g();
    let labels = map.labels();
    let mut seen = vec![false; labels.len()];
    let mut regions = 0;
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        regions += 1;
        seen[start] = true;
        if labels[start].is_none() {
            continue;
        }
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (i, j) = (idx % g, idx / g);
            let mut visit = |n: usize| {
                if !seen[n] && same(labels[idx], labels[n]) {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                visit(idx - 1);
            }
            if i + 1 < g {
                visit(idx + 1);
            }
            if j > 0 {
                visit(idx - g);
            }
            if j + 1 < g {
                visit(idx + g);
            }
        }
    }
    regions
}

/// Fraction of cells whose labels differ. Both maps must share a grid.
pub fn disagreement(a: &DecisionMap, b: &DecisionMap) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    let differ = a.cells.iter().zip(&b.cells).filter(|(x, y)| x.label != y.label).count();
    Ok(differ as f64 / a.cells.len() as f64)
}

/// Mean disagreement over all unordered pairs, with the pair count.
pub fn mean_pairwise_disagreement(maps: &[DecisionMap]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            total += disagreement(&maps[i], &maps[j])?;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Size("pairwise disagreement needs at least two maps".into()));
    }
    Ok((total / pairs as f64, pairs))
}

pub fn map_metrics(map: &DecisionMap, oracle: Option<&DecisionMap>) -> Result<MapMetrics> {
    Ok(MapMetrics {
        fragmentation: fragmentation(map),
        region_count: region_count(map),
        oracle_disagreement: oracle.map(|o| disagreement(map, o)).transpose()?,
        abstain_fraction: map.abstain_fraction(),
    })
}

/// Fraction of `test` classified correctly; abstains count as wrong.
pub fn test_accuracy(backend: &dyn Backend, ctx: &ProbeContext<'_>, test: &[Example]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Size("test set is empty".into()));
    }
    let queries: Vec<_> = test.iter().map(|e| e.x).collect();
    let results = classify_batch(backend, ctx, &queries);
    let correct = results
        .iter()
        .zip(test)
        .filter(|(r, e)| matches!(r, Ok(p) if p.class == e.y))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Groups `(n_context, accuracy)` observations into mean ± SE points,
/// sorted by `n_context`.
pub fn accuracy_curve(observations: &[(usize, f64)]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(n, acc) in observations {
        groups.entry(n).or_default().push(acc);
    }
    groups
        .into_iter()
        .map(|(n_context, accs)| {
            let n = accs.len() as f64;
            // Shifted sums keep identical observations exact.
            let shift = accs[0];
            let s1: f64 = accs.iter().map(|a| a - shift).sum();
            let s2: f64 = accs.iter().map(|a| (a - shift).powi(2)).sum();
            let mean = shift + s1 / n;
            let standard_error = if accs.len() < 2 {
                None
            } else {
                let var = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
                Some((var / n).sqrt())
            };
            CurvePoint {
                n_context,
                mean_accuracy: mean,
                standard_error,
                n_seeds: accs.len(),
            }
        })
        .collect()
}

/// `n_context,mean,se,n_seeds`, with an empty `se` when absent.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("n_context,mean,se,n_seeds\n");
    for p in points {
        let se = p.standard_error.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", p.n_context, p.mean_accuracy, se, p.n_seeds));
    }
    out
}
