//! CART decision tree with the Gini criterion.
//!
//! Candidate thresholds are midpoints between consecutive distinct values
//! of a feature; a point goes left when `x[feature] <= threshold`. Among
//! equally good splits the first one found wins (feature 0 before feature 1,
//! ascending threshold).

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::backend::LOG_FLOOR;
use crate::{Point, Result};

pub(crate) fn default_depth() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        class: usize,
        counts: Vec<usize>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub root: TreeNode,
    pub max_depth: usize,
    pub num_classes: usize,
}

/// Gini impurity of a class histogram.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// A chosen split: feature, threshold and the weighted child impurity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

/// Best split of `idx` by weighted Gini, scanning sorted values once per feature.
pub fn best_split(x: &[Point], y: &[usize], idx: &[usize], num_classes: usize) -> Option<SplitChoice> {
    let n = idx.len();
    let mut total = vec![0usize; num_classes];
    for &i in idx {
        total[y[i]] += 1;
    }
    let mut best: Option<SplitChoice> = None;
    for feature in 0..2 {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
        let mut left = vec![0usize; num_classes];
        for pos in 0..n.saturating_sub(1) {
            left[y[order[pos]]] += 1;
            let here = x[order[pos]][feature];
            let next = x[order[pos + 1]][feature];
            if here == next {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let nl = (pos + 1) as f64;
            let nr = (n - pos - 1) as f64;
            let impurity = (nl * gini(&left) + nr * gini(&right)) / n as f64;
            if best.is_none_or(|b| impurity < b.impurity) {
                best = Some(SplitChoice {
                    feature,
                    threshold: here + (next - here) / 2.0,
                    impurity,
                });
            }
        }
    }
    best
}

fn grow(x: &[Point], y: &[usize], idx: &[usize], num_classes: usize, depth_left: usize) -> TreeNode {
    let mut counts = vec![0usize; num_classes];
    for &i in idx {
        counts[y[i]] += 1;
    }
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let split = if pure || depth_left == 0 {
        None
    } else {
        best_split(x, y, idx, num_classes)
    };
    match split {
        None => TreeNode::Leaf {
            class: majority(&counts),
            counts,
        },
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
            TreeNode::Split {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(grow(x, y, &l, num_classes, depth_left - 1)),
                right: Box::new(grow(x, y, &r, num_classes, depth_left - 1)),
            }
        }
    }
}

pub fn fit_dtree(data: &Dataset, max_depth: usize) -> Result<TreeModel> {
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(TreeModel {
        root: grow(&data.x, &data.y, &idx, data.num_classes, max_depth),
        max_depth,
        num_classes: data.num_classes,
    })
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

impl TreeModel {
    fn leaf(&self, p: Point) -> (usize, &[usize]) {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { class, counts } => return (*class, counts),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if p[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, p: Point) -> usize {
        self.leaf(p).0
    }

    /// `ln` of the leaf's class fractions.
    pub fn scores(&self, p: Point) -> Vec<f64> {
        let (_, counts) = self.leaf(p);
        let n: usize = counts.iter().sum();
        counts
            .iter()
            .map(|&c| if c == 0 || n == 0 { LOG_FLOOR } else { (c as f64 / n as f64).ln() })
            .collect()
    }
}
