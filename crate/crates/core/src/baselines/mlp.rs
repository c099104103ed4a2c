//! ReLU multilayer perceptron with a softmax head, trained full-batch with Adam.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, TrainReport};
use crate::rng::{substream, MLP_INIT};
use crate::{Error, Point, Result};

pub(crate) fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}

pub(crate) fn default_max_iter() -> usize {
    1000
}

pub(crate) fn default_lr() -> f64 {
    1e-3
}

/// Training stops once the mean cross-entropy drops below this.
pub const LOSS_TOL: f64 = 1e-4;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

fn to_matrix(points: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j])
}

fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl MlpModel {
    /// He-uniform weights, zero biases.
    pub fn init(hidden: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("the MLP needs at least one hidden layer".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let mut rng = substream(seed, MLP_INIT);
        let mut sizes = vec![2];
        sizes.extend_from_slice(hidden);
        sizes.push(num_classes);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-limit..limit)),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(MlpModel { layers })
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.b.len())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Returns the inputs to each layer and the output logits.
    fn forward(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            inputs.push(h);
            if i < last {
                z.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
            }
            h = z;
        }
        (inputs, h)
    }

    pub fn logits(&self, points: &[Point]) -> Array2<f64> {
        self.forward(&to_matrix(points)).1
    }

    pub fn log_proba(&self, points: &[Point]) -> Vec<Vec<f64>> {
        log_softmax_rows(&self.logits(points)).rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn predict_many(&self, points: &[Point]) -> Vec<usize> {
        self.logits(points)
            .rows()
            .into_iter()
            .map(|r| crate::backend::argmax(r.as_slice().expect("logit rows are contiguous")))
            .collect()
    }

    pub fn predict(&self, p: Point) -> usize {
        self.predict_many(&[p])[0]
    }

    /// Mean cross-entropy and its gradient, one `Dense` per layer.
    pub fn loss_and_grad(&self, x: &Array2<f64>, y: &[usize]) -> (f64, Vec<Dense>) {
        let n = x.nrows() as f64;
        let (inputs, logits) = self.forward(x);
        let logp = log_softmax_rows(&logits);
        let loss = -y.iter().enumerate().map(|(i, &c)| logp[[i, c]]).sum::<f64>() / n;

        let mut delta = logp.mapv(f64::exp);
        for (i, &c) in y.iter().enumerate() {
            delta[[i, c]] -= 1.0;
        }
        delta /= n;

        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, input) in self.layers.iter().zip(&inputs).rev() {
            grads.push(Dense {
                w: input.t().dot(&delta),
                b: delta.sum_axis(Axis(0)),
            });
            // The input to every non-first layer is a ReLU output.
            let mut back = delta.dot(&layer.w.t());
            back.zip_mut_with(input, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            delta = back;
        }
        grads.reverse();
        (loss, grads)
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *v = it.next().expect("parameter count matches");
            }
        }
    }
}

/// Flattens gradients in the order of [`MlpModel::flat_params`].
pub fn flatten(grads: &[Dense]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.w.iter().chain(g.b.iter()).copied().collect::<Vec<_>>()).collect()
}

struct Moments {
    m: Vec<Dense>,
    v: Vec<Dense>,
}

pub fn fit_mlp(data: &Dataset, hidden: &[usize], max_iter: usize, lr: f64, seed: u64) -> Result<(MlpModel, TrainReport)> {
    let mut model = MlpModel::init(hidden, data.num_classes, seed)?;
    data.require_all_classes()?;
    let x = to_matrix(&data.x);
    let zeros = |m: &MlpModel| -> Vec<Dense> {
        m.layers
            .iter()
            .map(|l| Dense {
                w: Array2::zeros(l.w.raw_dim()),
                b: Array1::zeros(l.b.raw_dim()),
            })
            .collect()
    };
    let mut mom = Moments {
        m: zeros(&model),
        v: zeros(&model),
    };
    for t in 1..=max_iter {
        let (l, grads) = model.loss_and_grad(&x, &data.y);
        if !l.is_finite() {
            return Err(Error::Divergence(format!("cross-entropy became {l} at epoch {t}")));
        }
        if l < LOSS_TOL {
            return Ok((
                model,
                TrainReport {
                    iterations: t - 1,
                    final_loss: l,
                    converged: true,
                    wall_time_secs: 0.0,
                },
            ));
        }
        let c1 = 1.0 - BETA1.powi(t as i32);
        let c2 = 1.0 - BETA2.powi(t as i32);
        for ((layer, g), (m, v)) in model.layers.iter_mut().zip(&grads).zip(mom.m.iter_mut().zip(mom.v.iter_mut())) {
            adam_step(&mut layer.w, &g.w, &mut m.w, &mut v.w, lr, c1, c2);
            adam_step(&mut layer.b, &g.b, &mut m.b, &mut v.b, lr, c1, c2);
        }
    }
    let final_loss = model.loss_and_grad(&x, &data.y).0;
    if !final_loss.is_finite() {
        return Err(Error::Divergence(format!("cross-entropy became {final_loss} after training")));
    }
    Ok((
        model,
        TrainReport {
            iterations: max_iter,
            final_loss,
            converged: final_loss < LOSS_TOL,
            wall_time_secs: 0.0,
        },
    ))
}

fn adam_step<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{numeric_gradient, relative_error, ClassifierModel};
    use crate::taskgen::{gen_linear, TaskSpec};

    #[test]
    fn zero_hidden_layers_is_a_config_error() {
        let data = Dataset::new(vec![[0.0, 0.0], [1.0, 1.0]], vec![0, 1], 2).unwrap();
        assert!(matches!(fit_mlp(&data, &[], 10, 1e-3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_he_uniform_and_seeded() {
        let a = MlpModel::init(&[256, 256], 2, 9).unwrap();
        let b = MlpModel::init(&[256, 256], 2, 9).unwrap();
        let c = MlpModel::init(&[256, 256], 2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 256.0).sqrt();
        assert!(a.layers[1].w.iter().all(|w| w.abs() < limit));
        assert!(a.layers.iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
        assert_eq!(a.num_params(), 2 * 256 + 256 + 256 * 256 + 256 + 256 * 2 + 2);
    }

    #[test]
    fn gradient_matches_central_differences_on_four_points() {
        let x = to_matrix(&[[0.3, -1.2], [1.5, 0.4], [-0.7, 0.9], [2.1, -0.3]]);
        for (k, y) in [(2, vec![0, 1, 1, 0]), (3, vec![2, 0, 1, 2])] {
            let mut model = MlpModel::init(&[8, 8], k, 4).unwrap();
            // Nonzero biases exercise every gradient path.
            for (i, l) in model.layers.iter_mut().enumerate() {
                l.b.mapv_inplace(|_| 0.05 * (i as f64 + 1.0));
            }
            let (_, grads) = model.loss_and_grad(&x, &y);
            let analytic = flatten(&grads);
            let params = model.flat_params();
            let mut probe = model.clone();
            let numeric = numeric_gradient(&params, 1e-6, |p| {
                probe.set_flat_params(p);
                probe.loss_and_grad(&x, &y).0
            });
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn separable_blobs_are_fit_within_the_epoch_cap() {
        for seed in 0..5 {
            let task = gen_linear(&TaskSpec::linear(2, 64, 2.0, seed)).unwrap();
            let data = Dataset::new(
                task.points.iter().map(|p| p.raw).collect(),
                task.points.iter().map(|p| p.y).collect(),
                2,
            )
            .unwrap();
            let (model, report) = fit_mlp(&data, &default_hidden(), default_max_iter(), default_lr(), seed).unwrap();
            assert!(report.iterations <= 1000);
            assert_eq!(ClassifierModel::Mlp(model).accuracy(&data), 1.0, "seed {seed}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = Dataset::new(vec![[1.0, 2.0], [-1.0, -2.0]], vec![0, 1], 2).unwrap();
        assert!(matches!(fit_mlp(&data, &[4], 10, 1e306, 0), Err(Error::Divergence(_))));
    }
}
