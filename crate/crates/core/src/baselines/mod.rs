//! Classical classifiers, implemented natively.
//!
//! Default hyperparameters: k-NN with k = 5, CART with depth 3, an MLP with
//! two hidden layers of 256 units trained for at most 1000 epochs, and an
//! SVM with an RBF kernel of gamma 0.2 (or a cubic polynomial kernel).
//! Logistic regression doubles as the ground-truth oracle of the active
//! learning loop.
//!
//! All models consume raw task coordinates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::taskgen::Example;
use crate::{Error, Point, Result};

pub mod dtree;
pub mod knn;
pub mod logreg;
pub mod mlp;
pub mod svm;

pub use dtree::TreeModel;
pub use knn::KnnModel;
pub use logreg::LogregModel;
pub use mlp::MlpModel;
pub use svm::{Kernel, KernelSpec, SvmModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Point>,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(x: Vec<Point>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Size(format!("{} inputs but {} labels", x.len(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Label { index: bad, num_classes });
        }
        if x.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Numerical("non-finite input".into()));
        }
        Ok(Dataset { x, y, num_classes })
    }

    pub fn from_examples(examples: &[Example], num_classes: usize) -> Result<Self> {
        Dataset::new(
            examples.iter().map(|e| e.x).collect(),
            examples.iter().map(|e| e.y).collect(),
            num_classes,
        )
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Fails unless every class has at least one example.
    pub fn require_all_classes(&self) -> Result<()> {
        let counts = self.class_counts();
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateData(format!("class {missing} has no examples")));
        }
        Ok(())
    }

    /// Same inputs, labels mapped through `perm`.
    pub fn relabeled(&self, perm: &[usize]) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.iter().map(|&c| perm[c]).collect(),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    Logreg {
        #[serde(default)]
        l2: f64,
        #[serde(default = "logreg::default_lr")]
        lr: f64,
        #[serde(default = "logreg::default_max_iter")]
        max_iter: usize,
    },
    Knn {
        #[serde(default = "knn::default_k")]
        k: usize,
    },
    Dtree {
        #[serde(default = "dtree::default_depth")]
        max_depth: usize,
    },
    Mlp {
        #[serde(default = "mlp::default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "mlp::default_max_iter")]
        max_iter: usize,
        #[serde(default = "mlp::default_lr")]
        lr: f64,
        #[serde(default)]
        seed: u64,
    },
    Svm {
        kernel: KernelSpec,
        #[serde(default = "svm::default_c")]
        c: f64,
        #[serde(default = "svm::default_tol")]
        tol: f64,
    },
}

impl BaselineSpec {
    pub fn logreg() -> Self {
        BaselineSpec::Logreg {
            l2: 0.0,
            lr: logreg::default_lr(),
            max_iter: logreg::default_max_iter(),
        }
    }

    pub fn knn() -> Self {
        BaselineSpec::Knn { k: knn::default_k() }
    }

    pub fn dtree() -> Self {
        BaselineSpec::Dtree {
            max_depth: dtree::default_depth(),
        }
    }

    pub fn mlp(seed: u64) -> Self {
        BaselineSpec::Mlp {
            hidden: mlp::default_hidden(),
            max_iter: mlp::default_max_iter(),
            lr: mlp::default_lr(),
            seed,
        }
    }

    pub fn svm_rbf() -> Self {
        BaselineSpec::Svm {
            kernel: KernelSpec::Rbf { gamma: 0.2 },
            c: svm::default_c(),
            tol: svm::default_tol(),
        }
    }

    pub fn svm_poly() -> Self {
        BaselineSpec::Svm {
            kernel: KernelSpec::Poly {
                degree: 3,
                gamma: None,
                coef0: 1.0,
            },
            c: svm::default_c(),
            tol: svm::default_tol(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            BaselineSpec::Logreg { .. } => "logreg".into(),
            BaselineSpec::Knn { k } => format!("knn-{k}"),
            BaselineSpec::Dtree { max_depth } => format!("dtree-{max_depth}"),
            BaselineSpec::Mlp { hidden, .. } => format!(
                "mlp-{}",
                hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x")
            ),
            BaselineSpec::Svm { kernel, .. } => match kernel {
                KernelSpec::Rbf { .. } => "svm-rbf".into(),
                KernelSpec::Poly { .. } => "svm-poly".into(),
            },
        }
    }

    /// Looks up a preset by name: `logreg`, `knn`, `dtree`, `mlp`,
    /// `svm-rbf`, `svm-poly`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "logreg" => Ok(BaselineSpec::logreg()),
            "knn" => Ok(BaselineSpec::knn()),
            "dtree" | "tree" => Ok(BaselineSpec::dtree()),
            "mlp" => Ok(BaselineSpec::mlp(0)),
            "svm" | "svm-rbf" => Ok(BaselineSpec::svm_rbf()),
            "svm-poly" => Ok(BaselineSpec::svm_poly()),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }

    pub fn with_seed(self, new_seed: u64) -> Self {
        match self {
            BaselineSpec::Mlp {
                hidden, max_iter, lr, ..
            } => BaselineSpec::Mlp {
                hidden,
                max_iter,
                lr,
                seed: new_seed,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    /// Training loss; for the SVM, the final maximal KKT violation gap.
    pub final_loss: f64,
    pub converged: bool,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    Logreg(LogregModel),
    Knn(KnnModel),
    Dtree(TreeModel),
    Mlp(MlpModel),
    Svm(SvmModel),
}

impl ClassifierModel {
    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierModel::Logreg(m) => m.num_classes(),
            ClassifierModel::Knn(m) => m.num_classes,
            ClassifierModel::Dtree(m) => m.num_classes,
            ClassifierModel::Mlp(m) => m.num_classes(),
            ClassifierModel::Svm(m) => m.num_classes(),
        }
    }

    pub fn predict(&self, p: Point) -> usize {
        match self {
            ClassifierModel::Logreg(m) => m.predict(p),
            ClassifierModel::Knn(m) => m.predict(p),
            ClassifierModel::Dtree(m) => m.predict(p),
            ClassifierModel::Mlp(m) => m.predict(p),
            ClassifierModel::Svm(m) => m.predict(p),
        }
    }

    /// Per-class scores whose argmax (lowest index on ties) is the
    /// prediction: log-probabilities where the model has them, decision
    /// values for the SVM.
    pub fn scores(&self, p: Point) -> Vec<f64> {
        match self {
            ClassifierModel::Logreg(m) => m.log_proba(p),
            ClassifierModel::Knn(m) => m.scores(p),
            ClassifierModel::Dtree(m) => m.scores(p),
            ClassifierModel::Mlp(m) => m.log_proba(&[p]).remove(0),
            ClassifierModel::Svm(m) => m.scores(p),
        }
    }

    pub fn scores_many(&self, points: &[Point]) -> Vec<Vec<f64>> {
        match self {
            ClassifierModel::Mlp(m) => m.log_proba(points),
            _ => points.iter().map(|p| self.scores(*p)).collect(),
        }
    }

    pub fn predict_many(&self, points: &[Point]) -> Vec<usize> {
        match self {
            ClassifierModel::Mlp(m) => m.predict_many(points),
            _ => points.iter().map(|p| self.predict(*p)).collect(),
        }
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let preds = self.predict_many(&data.x);
        preds.iter().zip(&data.y).filter(|(p, y)| p == y).count() as f64 / data.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn fit(spec: &BaselineSpec, data: &Dataset) -> Result<(ClassifierModel, TrainReport)> {
    let start = Instant::now();
    let (model, mut report) = match spec {
        BaselineSpec::Logreg { l2, lr, max_iter } => {
            let (m, r) = logreg::fit_logreg(data, *l2, *lr, *max_iter)?;
            (ClassifierModel::Logreg(m), r)
        }
        BaselineSpec::Knn { k } => {
            let m = knn::fit_knn(data, *k)?;
            (ClassifierModel::Knn(m), TrainReport::trivial())
        }
        BaselineSpec::Dtree { max_depth } => {
            let m = dtree::fit_dtree(data, *max_depth)?;
            (ClassifierModel::Dtree(m), TrainReport::trivial())
        }
        BaselineSpec::Mlp {
            hidden,
            max_iter,
            lr,
            seed,
        } => {
            let (m, r) = mlp::fit_mlp(data, hidden, *max_iter, *lr, *seed)?;
            (ClassifierModel::Mlp(m), r)
        }
        BaselineSpec::Svm { kernel, c, tol } => {
            let (m, r) = svm::fit_svm(data, kernel, *c, *tol)?;
            (ClassifierModel::Svm(m), r)
        }
    };
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((model, report))
}

impl TrainReport {
    fn trivial() -> Self {
        TrainReport {
            iterations: 0,
            final_loss: 0.0,
            converged: true,
            wall_time_secs: 0.0,
        }
    }
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), the usual gradient-check error.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central finite-difference gradient of `f` at `params`.
pub fn numeric_gradient(params: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + step;
            let plus = f(&work);
            work[i] = orig - step;
            let minus = f(&work);
            work[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{gen_linear, TaskSpec};

    fn linear_data(seed: u64) -> Dataset {
        let task = gen_linear(&TaskSpec::linear(2, 64, 2.0, seed)).unwrap();
        Dataset::new(
            task.points.iter().map(|p| p.raw).collect(),
            task.points.iter().map(|p| p.y).collect(),
            2,
        )
        .unwrap()
    }

    // Swapping the two training labels must swap every prediction.
    #[test]
    fn label_swap_symmetry() {
        let data = linear_data(1);
        let swapped = data.relabeled(&[1, 0]);
        let probes: Vec<Point> = (0..15)
            .flat_map(|i| (0..15).map(move |j| [-3.5 + 0.5 * i as f64, -1.0 + 0.35 * j as f64]))
            .collect();
        for spec in [
            BaselineSpec::logreg(),
            BaselineSpec::knn(),
            BaselineSpec::dtree(),
            BaselineSpec::svm_rbf(),
            BaselineSpec::svm_poly(),
        ] {
            let (a, _) = fit(&spec, &data).unwrap();
            let (b, _) = fit(&spec, &swapped).unwrap();
            for p in &probes {
                let sa = a.scores(*p);
                // Skip exact decision ties, where the lowest-index rule is asymmetric.
                if (sa[0] - sa[1]).abs() < 1e-9 {
                    continue;
                }
                assert_eq!(a.predict(*p), 1 - b.predict(*p), "{} at {p:?}", spec.name());
            }
        }
    }

    #[test]
    fn model_dump_reproduces_predictions_bit_for_bit() {
        let data = linear_data(2);
        let probes: Vec<Point> = (0..40).map(|i| [-3.0 + 0.15 * i as f64, 2.0 - 0.05 * i as f64]).collect();
        for spec in [
            BaselineSpec::logreg(),
            BaselineSpec::knn(),
            BaselineSpec::dtree(),
            BaselineSpec::Mlp {
                hidden: vec![16, 16],
                max_iter: 50,
                lr: 1e-3,
                seed: 3,
            },
            BaselineSpec::svm_poly(),
        ] {
            let (model, _) = fit(&spec, &data).unwrap();
            let reloaded = ClassifierModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(model, reloaded);
            for p in &probes {
                assert_eq!(model.scores(*p), reloaded.scores(*p), "{}", spec.name());
            }
        }
    }

    #[test]
    fn scores_argmax_agrees_with_predict() {
        let data = linear_data(4);
        for spec in [BaselineSpec::logreg(), BaselineSpec::knn(), BaselineSpec::dtree(), BaselineSpec::svm_rbf()] {
            let (model, _) = fit(&spec, &data).unwrap();
            for i in 0..100 {
                let p = [-3.0 + 0.06 * i as f64, 2.0];
                assert_eq!(crate::backend::argmax(&model.scores(p)), model.predict(p), "{}", spec.name());
            }
        }
    }
}
