//! k-nearest neighbours.
//!
//! Euclidean distance. Distance ties at the k-th rank keep the earlier
//! training point; vote ties go to the class with the smaller summed
//! distance, then to the lower class index.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::backend::LOG_FLOOR;
use crate::{Error, Point, Result};

pub(crate) fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Vec<Point>,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

pub fn fit_knn(data: &Dataset, k: usize) -> Result<KnnModel> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if data.len() < k {
        return Err(Error::Size(format!("k-NN with k = {k} needs at least {k} points, got {}", data.len())));
    }
    Ok(KnnModel {
        k,
        x: data.x.clone(),
        y: data.y.clone(),
        num_classes: data.num_classes,
    })
}

/// Returns the k nearest training indices, closest first.
pub fn nearest(x: &[Point], query: Point, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = x
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0] - query[0]).powi(2) + (p[1] - query[1]).powi(2), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order.into_iter().map(|(_, i)| i).collect()
}

impl KnnModel {
    fn tally(&self, p: Point) -> (Vec<usize>, Vec<f64>) {
        let mut votes = vec![0usize; self.num_classes];
        let mut dist = vec![0.0f64; self.num_classes];
        for i in nearest(&self.x, p, self.k) {
            let c = self.y[i];
            votes[c] += 1;
            dist[c] += ((self.x[i][0] - p[0]).powi(2) + (self.x[i][1] - p[1]).powi(2)).sqrt();
        }
        (votes, dist)
    }

    fn winner(votes: &[usize], dist: &[f64]) -> usize {
        let mut best = 0;
        for c in 1..votes.len() {
            if votes[c] > votes[best] || (votes[c] == votes[best] && dist[c] < dist[best]) {
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, p: Point) -> usize {
        let (votes, dist) = self.tally(p);
        Self::winner(&votes, &dist)
    }

    /// `ln(vote fraction)`; a tied winner is nudged up so that the argmax
    /// agrees with [`KnnModel::predict`].
    pub fn scores(&self, p: Point) -> Vec<f64> {
        let (votes, dist) = self.tally(p);
        let winner = Self::winner(&votes, &dist);
        let mut scores: Vec<f64> = votes
            .iter()
            .map(|&v| if v == 0 { LOG_FLOOR } else { (v as f64 / self.k as f64).ln() })
            .collect();
        if votes.iter().enumerate().any(|(c, &v)| c != winner && v == votes[winner]) {
            scores[winner] += 1e-9;
        }
        scores
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{gen_moons, TaskSpec};

    #[test]
    fn unanimous_neighbourhood() {
        let data = Dataset::new(
            vec![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [0.05, 0.05], [5.0, 5.0], [5.1, 5.0]],
            vec![1, 1, 1, 1, 1, 0, 0],
            2,
        )
        .unwrap();
        let model = fit_knn(&data, 5).unwrap();
        assert_eq!(model.predict([0.0, 0.05]), 1);
    }

    #[test]
    fn coinciding_query_is_its_own_first_neighbour() {
        let x = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0]];
        assert_eq!(nearest(&x, [3.0, 3.0], 5)[0], 3);
    }

    #[test]
    fn distance_ties_keep_insertion_order() {
        let x = vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        assert_eq!(nearest(&x, [0.0, 0.0], 2), vec![0, 1]);
    }

    #[test]
    fn vote_ties_fall_to_the_closer_class() {
        // K = 3, k = 5: votes 2 / 2 / 1; class 2 is closer in total than class 0.
        let data = Dataset::new(
            vec![[1.0, 0.0], [1.1, 0.0], [0.5, 0.0], [0.6, 0.0], [2.0, 0.0]],
            vec![0, 0, 2, 2, 1],
            3,
        )
        .unwrap();
        let model = fit_knn(&data, 5).unwrap();
        assert_eq!(model.predict([0.0, 0.0]), 2);
        assert_eq!(crate::backend::argmax(&model.scores([0.0, 0.0])), 2);
    }

    #[test]
    fn too_few_points() {
        let data = Dataset::new(vec![[0.0, 0.0]; 4], vec![0, 1, 0, 1], 2).unwrap();
        assert!(matches!(fit_knn(&data, 5), Err(Error::Size(_))));
    }

    // Exhaustive O(n k) scan: repeatedly extract the closest unused point.
    fn brute_force(x: &[Point], y: &[usize], q: Point, k: usize, num_classes: usize) -> usize {
        let mut used = vec![false; x.len()];
        let mut votes = vec![0usize; num_classes];
        let mut dist = vec![0.0; num_classes];
        for _ in 0..k {
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in x.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            let (d, i) = best.unwrap();
            used[i] = true;
            votes[y[i]] += 1;
            dist[y[i]] += d;
        }
        let mut winner = 0;
        for c in 1..num_classes {
            if votes[c] > votes[winner] || (votes[c] == votes[winner] && dist[c] < dist[winner]) {
                winner = c;
            }
        }
        winner
    }

    #[test]
    fn agrees_with_exhaustive_scan_on_a_grid() {
        let task = gen_moons(&TaskSpec::moon(200, 0.1, 7)).unwrap();
        let x: Vec<Point> = task.points.iter().map(|p| p.raw).collect();
        let y: Vec<usize> = task.points.iter().map(|p| p.y).collect();
        let model = fit_knn(&Dataset::new(x.clone(), y.clone(), 2).unwrap(), 5).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let q = [-1.3 + 3.6 * i as f64 / 49.0, -0.9 + 2.4 * j as f64 / 49.0];
                assert_eq!(model.predict(q), brute_force(&x, &y, q, 5, 2));
            }
        }
    }
}
