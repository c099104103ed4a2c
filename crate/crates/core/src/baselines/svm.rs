//! Kernel SVM trained by SMO on the dual.
//!
//! The dual is solved in its minimization form
//! `min ½ αᵀQα − Σα` subject to `0 ≤ α ≤ C`, `Σ αᵢyᵢ = 0`, with
//! `Q_ij = yᵢ yⱼ k(xᵢ, xⱼ)`. Each step updates the maximal violating pair
//! and the solver stops once the violation gap drops below `tol`.
//! Class 1 is the positive class for K = 2; more classes use one-vs-rest.

use serde::{Deserialize, Serialize};

use super::{Dataset, TrainReport};
use crate::{Error, Point, Result};

pub(crate) fn default_c() -> f64 {
    1.0
}

pub(crate) fn default_tol() -> f64 {
    1e-3
}

/// Iteration cap for a single binary problem.
pub const MAX_SMO_ITER: usize = 10_000_000;
const TAU: f64 = 1e-12;

/// Kernel as configured; `gamma: None` for the polynomial kernel means
/// `1 / (2 · var)` of the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf {
        gamma: f64,
    },
    Poly {
        degree: u32,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "one")]
        coef0: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Kernel with every parameter resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Poly { degree: u32, gamma: f64, coef0: f64 },
}

impl Kernel {
    pub fn eval(&self, a: Point, b: Point) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => (-gamma * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))).exp(),
            Kernel::Poly { degree, gamma, coef0 } => {
                (gamma * (a[0] * b[0] + a[1] * b[1]) + coef0).powi(degree as i32)
            }
        }
    }
}

impl KernelSpec {
    pub fn resolve(&self, x: &[Point]) -> Result<Kernel> {
        match *self {
            KernelSpec::Rbf { gamma } => {
                if !(gamma > 0.0) {
                    return Err(Error::Config(format!("RBF gamma must be positive, got {gamma}")));
                }
                Ok(Kernel::Rbf { gamma })
            }
            KernelSpec::Poly { degree, gamma, coef0 } => {
                let gamma = match gamma {
                    Some(g) => g,
                    None => {
                        let var = input_variance(x);
                        if var > 0.0 {
                            1.0 / (2.0 * var)
                        } else {
                            1.0
                        }
                    }
                };
                Ok(Kernel::Poly { degree, gamma, coef0 })
            }
        }
    }
}

/// Variance over every coordinate of every input.
pub fn input_variance(x: &[Point]) -> f64 {
    let n = (2 * x.len()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = x.iter().map(|p| p[0] + p[1]).sum::<f64>() / n;
    x.iter().map(|p| (p[0] - mean).powi(2) + (p[1] - mean).powi(2)).sum::<f64>() / n
}

/// Solution of one binary dual problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final maximal violation `m(α) − M(α)`.
    pub gap: f64,
    pub converged: bool,
}

pub fn kernel_matrix(x: &[Point], kernel: &Kernel) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(x[i], x[j]);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("kernel value k(x{i}, x{j}) = {v}")));
            }
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    Ok(k)
}

/// `Σα − ½ ΣΣ αᵢαⱼyᵢyⱼKᵢⱼ`, the dual objective being maximized.
pub fn dual_objective(alpha: &[f64], y: &[f64], k: &[Vec<f64>]) -> f64 {
    let mut quad = 0.0;
    for i in 0..alpha.len() {
        for j in 0..alpha.len() {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// SMO with maximal-violating-pair selection. `y` holds ±1.
pub fn solve_dual(k: &[Vec<f64>], y: &[f64], c: f64, tol: f64) -> DualSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    while iterations < MAX_SMO_ITER {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < tol {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    DualSolution {
        bias: bias(&alpha, y, &grad, c),
        converged: gap < tol,
        alpha,
        iterations,
        gap,
    }
}

/// Mean of `−yᵢGᵢ` over free support vectors, else the midpoint of the
/// feasible interval.
fn bias(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    -rho
}

/// One binary machine: `f(x) = Σ coefᵢ k(svᵢ, x) + bias` with `coefᵢ = αᵢyᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub support: Vec<Point>,
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl BinaryMachine {
    pub fn decision(&self, kernel: &Kernel, p: Point) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * kernel.eval(*s, p))
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    /// One machine for K = 2, otherwise one per class.
    pub machines: Vec<BinaryMachine>,
    pub num_classes: usize,
}

pub fn fit_svm(data: &Dataset, kernel: &KernelSpec, c: f64, tol: f64) -> Result<(SvmModel, TrainReport)> {
    if !(c > 0.0) || !(tol > 0.0) {
        return Err(Error::Config(format!("SVM needs C > 0 and tol > 0, got C = {c}, tol = {tol}")));
    }
    data.require_all_classes()?;
    let kernel = kernel.resolve(&data.x)?;
    let k = kernel_matrix(&data.x, &kernel)?;
    let positives: Vec<usize> = if data.num_classes == 2 { vec![1] } else { (0..data.num_classes).collect() };
    let mut report = TrainReport {
        iterations: 0,
        final_loss: 0.0,
        converged: true,
        wall_time_secs: 0.0,
    };
    let mut machines = Vec::with_capacity(positives.len());
    for positive in positives {
        let y: Vec<f64> = data.y.iter().map(|&l| if l == positive { 1.0 } else { -1.0 }).collect();
        let sol = solve_dual(&k, &y, c, tol);
        report.iterations = report.iterations.max(sol.iterations);
        report.final_loss = report.final_loss.max(sol.gap);
        report.converged &= sol.converged;
        let mut machine = BinaryMachine {
            support: Vec::new(),
            coef: Vec::new(),
            bias: sol.bias,
        };
        for (i, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                machine.support.push(data.x[i]);
                machine.coef.push(a * y[i]);
            }
        }
        machines.push(machine);
    }
    if !report.converged {
        log::warn!("SMO stopped at the iteration cap with violation gap {}", report.final_loss);
    }
    Ok((
        SvmModel {
            kernel,
            c,
            machines,
            num_classes: data.num_classes,
        },
        report,
    ))
}

impl SvmModel {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Decision values: `(−f/2, f/2)` for two classes, one per class otherwise.
    pub fn scores(&self, p: Point) -> Vec<f64> {
        if self.num_classes == 2 {
            let f = self.machines[0].decision(&self.kernel, p);
            vec![-f / 2.0, f / 2.0]
        } else {
            self.machines.iter().map(|m| m.decision(&self.kernel, p)).collect()
        }
    }

    pub fn predict(&self, p: Point) -> usize {
        crate::backend::argmax(&self.scores(p))
    }
}
