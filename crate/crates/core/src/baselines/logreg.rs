//! Logistic regression by full-batch gradient descent.
//!
//! Two classes use a single linear score; more classes use one-vs-rest.

use serde::{Deserialize, Serialize};

use super::{Dataset, TrainReport};
use crate::{Error, Point, Result};

pub(crate) fn default_lr() -> f64 {
    1.0
}

pub(crate) fn default_max_iter() -> usize {
    100_000
}

/// Gradient-norm stopping threshold.
pub const GRAD_TOL: f64 = 1e-8;
/// On separable data (no L2), stop once every margin logit exceeds this.
pub const MARGIN_LOGIT: f64 = 10.0;

/// `[w0, w1, bias]`.
pub type Weights = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogregModel {
    /// One weight vector for K = 2 (positive class 1), otherwise one per class.
    pub weights: Vec<Weights>,
    pub num_classes: usize,
}

fn score(w: &Weights, p: Point) -> f64 {
    w[0] * p[0] + w[1] * p[1] + w[2]
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy plus `l2/2 * (w0² + w1²)` and its gradient.
/// `targets` are 0/1.
pub fn loss_and_grad(w: &Weights, x: &[Point], targets: &[f64], l2: f64) -> (f64, Weights) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; 3];
    for (p, &t) in x.iter().zip(targets) {
        let z = score(w, *p);
        // log(1 + e^z) - t z
        loss += -log_sigmoid(-z) - t * z;
        let r = sigmoid(z) - t;
        grad[0] += r * p[0];
        grad[1] += r * p[1];
        grad[2] += r;
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    loss += 0.5 * l2 * (w[0] * w[0] + w[1] * w[1]);
    grad[0] += l2 * w[0];
    grad[1] += l2 * w[1];
    (loss, grad)
}

struct BinaryFit {
    weights: Weights,
    iterations: usize,
    loss: f64,
    converged: bool,
}

fn fit_binary(x: &[Point], targets: &[f64], l2: f64, lr: f64, max_iter: usize) -> Result<BinaryFit> {
    let mut w = [0.0; 3];
    let mut loss = f64::NAN;
    for it in 0..max_iter {
        let (l, g) = loss_and_grad(&w, x, targets, l2);
        if !l.is_finite() {
            return Err(Error::Divergence(format!("logistic loss became {l} at iteration {it}")));
        }
        loss = l;
        let grad_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let separated = l2 == 0.0
            && x
                .iter()
                .zip(targets)
                .all(|(p, &t)| (2.0 * t - 1.0) * score(&w, *p) > MARGIN_LOGIT);
        if grad_inf < GRAD_TOL || separated {
            return Ok(BinaryFit {
                weights: w,
                iterations: it,
                loss,
                converged: true,
            });
        }
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= lr * gi;
        }
    }
    Ok(BinaryFit {
        weights: w,
        iterations: max_iter,
        loss,
        converged: false,
    })
}

pub fn fit_logreg(data: &Dataset, l2: f64, lr: f64, max_iter: usize) -> Result<(LogregModel, TrainReport)> {
    let counts = data.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateData("logistic regression needs at least two classes".into()));
    }
    data.require_all_classes()?;
    let positives: Vec<usize> = if data.num_classes == 2 { vec![1] } else { (0..data.num_classes).collect() };
    let mut weights = Vec::with_capacity(positives.len());
    let mut report = TrainReport {
        iterations: 0,
        final_loss: 0.0,
        converged: true,
        wall_time_secs: 0.0,
    };
    for positive in positives {
        let targets: Vec<f64> = data.y.iter().map(|&c| f64::from(u8::from(c == positive))).collect();
        let fit = fit_binary(&data.x, &targets, l2, lr, max_iter)?;
        weights.push(fit.weights);
        report.iterations = report.iterations.max(fit.iterations);
        report.final_loss = report.final_loss.max(fit.loss);
        report.converged &= fit.converged;
    }
    Ok((
        LogregModel {
            weights,
            num_classes: data.num_classes,
        },
        report,
    ))
}

impl LogregModel {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Linear decision scores: `(0, z)` for two classes, `z_c` otherwise.
    pub fn decision(&self, p: Point) -> Vec<f64> {
        if self.num_classes == 2 {
            vec![0.0, score(&self.weights[0], p)]
        } else {
            self.weights.iter().map(|w| score(w, p)).collect()
        }
    }

    pub fn log_proba(&self, p: Point) -> Vec<f64> {
        if self.num_classes == 2 {
            let z = score(&self.weights[0], p);
            vec![log_sigmoid(-z), log_sigmoid(z)]
        } else {
            let logs: Vec<f64> = self.weights.iter().map(|w| log_sigmoid(score(w, p))).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            logs.iter().map(|l| l - lse).collect()
        }
    }

    pub fn predict(&self, p: Point) -> usize {
        crate::backend::argmax(&self.decision(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{numeric_gradient, relative_error};
    use crate::taskgen::{gen_linear, gen_moons, TaskSpec};

    fn dataset(task: &crate::taskgen::TaskInstance) -> Dataset {
        Dataset::new(
            task.points.iter().map(|p| p.raw).collect(),
            task.points.iter().map(|p| p.y).collect(),
            task.spec.num_classes,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_pair_gives_the_perpendicular_bisector() {
        let data = Dataset::new(vec![[-1.0, 0.0], [1.0, 0.0]], vec![0, 1], 2).unwrap();
        let (model, report) = fit_logreg(&data, 0.0, default_lr(), default_max_iter()).unwrap();
        let w = model.weights[0];
        assert!(report.converged);
        assert!(w[0] > 0.0);
        assert!(w[1].abs() < 1e-12);
        assert!((w[2] / w[0]).abs() < 1e-9, "boundary at x0 = {}", -w[2] / w[0]);
        assert_eq!(model.predict([-0.01, 5.0]), 0);
        assert_eq!(model.predict([0.01, -5.0]), 1);
    }

    #[test]
    fn separable_linear_task_is_fit_perfectly() {
        let task = gen_linear(&TaskSpec::linear(2, 1024, 1.5, 0)).unwrap();
        let data = dataset(&task);
        let (model, report) = fit_logreg(&data, 0.0, default_lr(), default_max_iter()).unwrap();
        assert_eq!(crate::baselines::ClassifierModel::Logreg(model).accuracy(&data), 1.0);
        assert!(report.final_loss < 0.05, "{report:?}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let task = gen_moons(&TaskSpec::moon(64, 0.1, 1)).unwrap();
        let data = dataset(&task);
        let targets: Vec<f64> = data.y.iter().map(|&c| c as f64).collect();
        for w in [[0.3, -0.7, 0.1], [2.0, 1.0, -0.5], [-1.0, 0.2, 3.0]] {
            for l2 in [0.0, 0.1] {
                let (_, g) = loss_and_grad(&w, &data.x, &targets, l2);
                let num = numeric_gradient(&w, 1e-5, |p| loss_and_grad(&[p[0], p[1], p[2]], &data.x, &targets, l2).0);
                assert!(relative_error(&g, &num) < 1e-4);
            }
        }
    }

    #[test]
    fn gradient_check_at_fitted_weights() {
        let task = gen_moons(&TaskSpec::moon(64, 0.1, 1)).unwrap();
        let data = dataset(&task);
        let (model, _) = fit_logreg(&data, 0.0, default_lr(), 2000).unwrap();
        let w = model.weights[0];
        let targets: Vec<f64> = data.y.iter().map(|&c| c as f64).collect();
        let (_, g) = loss_and_grad(&w, &data.x, &targets, 0.0);
        let num = numeric_gradient(&w, 1e-5, |p| loss_and_grad(&[p[0], p[1], p[2]], &data.x, &targets, 0.0).0);
        let abs = g.iter().zip(&num).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(relative_error(&g, &num) < 1e-4 || abs < 1e-10, "rel {} abs {abs}", relative_error(&g, &num));
    }

    #[test]
    fn single_class_data_is_degenerate() {
        let data = Dataset::new(vec![[0.0, 0.0], [1.0, 1.0]], vec![1, 1], 2).unwrap();
        assert!(matches!(fit_logreg(&data, 0.0, 1.0, 10), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn one_vs_rest_for_four_classes() {
        let task = gen_linear(&TaskSpec::linear(4, 128, 2.0, 5)).unwrap();
        let data = dataset(&task);
        let (model, _) = fit_logreg(&data, 0.0, default_lr(), 20_000).unwrap();
        assert_eq!(model.weights.len(), 4);
        let acc = crate::baselines::ClassifierModel::Logreg(model).accuracy(&data);
        assert!(acc > 0.98, "{acc}");
    }
}
