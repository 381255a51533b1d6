//! Binary logistic regression. Both solvers minimize
//!
//!   F(w, b) = C * sum_i s_i * log(1 + exp(-y_i (w.x_i + b))) + R(w)
//!
//! with y_i in {-1, +1}, s_i the class weight of sample i, and R(w) either
//! |w|^2 / 2 or |w|_1. The intercept is not penalized.

use serde::{Deserialize, Serialize};

use super::{class_weights, LearnError, LogregConfig, Penalty, Solver};
use crate::features::{FeatureMatrix, Row};

pub const GRADIENT_TOL: f64 = 1e-4;
pub const STEP_TOL: f64 = 1e-4;
pub const MAX_ITER: usize = 1000;
const HISTORY: usize = 10;
const F_TOL: f64 = 2.2e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogregModel {
    pub config: LogregConfig,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

impl LogregModel {
    pub fn linear(&self, x: &Row<'_>) -> f64 {
        x.dot_dense(&self.weights) + self.intercept
    }

    /// P(Intrinsic | x).
    pub fn probability(&self, x: &Row<'_>) -> f64 {
        sigmoid(self.linear(x))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-m)) without overflow.
fn log_loss(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// The objective over the stacked parameter vector `[w_0 .. w_{d-1}, b]`.
pub struct LogisticObjective<'a> {
    matrix: &'a FeatureMatrix,
    y: Vec<f64>,
    /// C * class weight, per sample.
    cost: Vec<f64>,
    penalty: Penalty,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(matrix: &'a FeatureMatrix, config: &LogregConfig) -> Result<Self, LearnError> {
        let (w0, w1) = class_weights(config.class_weight, matrix.labels())?;
        let y = matrix
            .labels()
            .iter()
            .map(|&l| if l == 1 { 1.0 } else { -1.0 })
            .collect();
        let cost = matrix
            .labels()
            .iter()
            .map(|&l| config.c * if l == 1 { w1 } else { w0 })
            .collect();
        Ok(LogisticObjective {
            matrix,
            y,
            cost,
            penalty: config.penalty,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_cols() + 1
    }

    fn margins(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.matrix.n_cols();
        (0..self.matrix.n_rows())
            .map(|i| self.matrix.row(i).dot_dense(&theta[..d]) + theta[d])
            .collect()
    }

    fn regularizer(&self, w: &[f64]) -> f64 {
        match self.penalty {
            Penalty::L2 => 0.5 * w.iter().map(|v| v * v).sum::<f64>(),
            Penalty::L1 => w.iter().map(|v| v.abs()).sum(),
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let d = self.matrix.n_cols();
        let loss: f64 = self
            .margins(theta)
            .iter()
            .enumerate()
            .map(|(i, z)| self.cost[i] * log_loss(self.y[i] * z))
            .sum();
        loss + self.regularizer(&theta[..d])
    }

    /// Gradient of the data term plus, for L2, the penalty. For L1 the
    /// penalty's subgradient is left out.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.matrix.n_cols();
        let mut g = vec![0.0; d + 1];
        for (i, z) in self.margins(theta).iter().enumerate() {
            let r = -self.cost[i] * self.y[i] * sigmoid(-self.y[i] * z);
            for (c, v) in self.matrix.row(i).entries() {
                g[c] += r * v;
            }
            g[d] += r;
        }
        if self.penalty == Penalty::L2 {
            for (gj, wj) in g[..d].iter_mut().zip(theta) {
                *gj += wj;
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS with Armijo backtracking on the L2 objective. Converges when the
/// gradient's max-norm drops below `GRADIENT_TOL` relative to its initial
/// value (floored at 1), or when the objective stops decreasing.
fn lbfgs(obj: &LogisticObjective<'_>) -> Result<(Vec<f64>, usize), LearnError> {
    let n = obj.dim();
    let mut x = vec![0.0; n];
    let mut f = obj.value(&x);
    let mut g = obj.gradient(&x);
    let tol = GRADIENT_TOL * inf_norm(&g).max(1.0);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    for iter in 0..MAX_ITER {
        if inf_norm(&g) <= tol {
            return Ok((x, iter));
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            alphas[k] = rho * dot(&s_hist[k], &q);
            for (qi, yi) in q.iter_mut().zip(&y_hist[k]) {
                *qi -= alphas[k] * yi;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let scale = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for k in 0..s_hist.len() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            let beta = rho * dot(&y_hist[k], &q);
            for (qi, si) in q.iter_mut().zip(&s_hist[k]) {
                *qi += (alphas[k] - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if s_hist.is_empty() {
            1.0 / inf_norm(&g).max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let fn_ = obj.value(&xn);
            if fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            return Ok((x, iter));
        };
        let gn = obj.gradient(&xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let converged_f = (f - fn_) <= F_TOL * f.abs().max(fn_.abs()).max(1.0);
        if dot(&s, &yv) > 1e-12 {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        x = xn;
        f = fn_;
        g = gn;
        if converged_f {
            return Ok((x, iter + 1));
        }
    }
    if inf_norm(&g) <= tol {
        return Ok((x, MAX_ITER));
    }
    Err(LearnError::Convergence {
        solver: "lbfgs",
        iterations: MAX_ITER,
        residual: inf_norm(&g),
    })
}

/// Cyclic coordinate descent: one Newton step per coordinate (soft-thresholded
/// for L1) with backtracking on the exact objective change. The intercept is
/// the last coordinate. Stops when an epoch moves no coordinate by more than
/// `STEP_TOL`.
#[allow(clippy::needless_range_loop)]
fn coordinate_descent(obj: &LogisticObjective<'_>) -> Result<(Vec<f64>, usize), LearnError> {
    let d = obj.matrix.n_cols();
    let n = obj.matrix.n_rows();
    let cols = obj.matrix.column_index();
    let intercept_col: Vec<(u32, f64)> = (0..n as u32).map(|i| (i, 1.0)).collect();
    let mut theta = vec![0.0; d + 1];
    let mut z = vec![0.0; n];
    let l1 = obj.penalty == Penalty::L1;
    let mut max_step = f64::INFINITY;
    for epoch in 0..MAX_ITER {
        max_step = 0.0;
        for j in 0..=d {
            let col = if j == d { &intercept_col } else { &cols.columns[j] };
            if col.is_empty() {
                continue;
            }
            let (mut g, mut h) = (0.0, 0.0);
            for &(i, v) in col {
                let i = i as usize;
                let p = sigmoid(-obj.y[i] * z[i]);
                g += -obj.cost[i] * obj.y[i] * p * v;
                h += obj.cost[i] * p * (1.0 - p) * v * v;
            }
            let w = theta[j];
            let penalized = j < d;
            let dir = if !penalized {
                -g / h.max(1e-12)
            } else if l1 {
                let h = h.max(1e-12);
                if g + 1.0 <= h * w {
                    -(g + 1.0) / h
                } else if g - 1.0 >= h * w {
                    -(g - 1.0) / h
                } else {
                    -w
                }
            } else {
                -(g + w) / (h + 1.0)
            };
            if dir == 0.0 {
                continue;
            }
            let reg = |w: f64| -> f64 {
                match (penalized, l1) {
                    (false, _) => 0.0,
                    (true, true) => w.abs(),
                    (true, false) => 0.5 * w * w,
                }
            };
            // predicted decrease for the sufficient-decrease test
            let model = if penalized && l1 {
                g * dir + (w + dir).abs() - w.abs()
            } else if penalized {
                (g + w) * dir
            } else {
                g * dir
            };
            let mut lambda = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let step = lambda * dir;
                let mut delta = reg(w + step) - reg(w);
                for &(i, v) in col {
                    let i = i as usize;
                    delta += obj.cost[i] * (log_loss(obj.y[i] * (z[i] + step * v)) - log_loss(obj.y[i] * z[i]));
                }
                if delta <= 0.01 * lambda * model {
                    for &(i, v) in col {
                        z[i as usize] += step * v;
                    }
                    theta[j] = w + step;
                    max_step = f64::max(max_step, step.abs());
                    moved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !moved {
                continue;
            }
        }
        if max_step <= STEP_TOL {
            return Ok((theta, epoch + 1));
        }
    }
    Err(LearnError::Convergence {
        solver: "coordinate_descent",
        iterations: MAX_ITER,
        residual: max_step,
    })
}

pub fn fit(config: &LogregConfig, matrix: &FeatureMatrix) -> Result<LogregModel, LearnError> {
    let obj = LogisticObjective::new(matrix, config)?;
    let (theta, iterations) = match (config.solver, config.penalty) {
        (Solver::Lbfgs, Penalty::L2) => lbfgs(&obj)?,
        (Solver::Lbfgs, Penalty::L1) => {
            return Err(LearnError::InvalidConfig(
                "penalty l1 requires the coordinate_descent solver".into(),
            ))
        }
        (Solver::CoordinateDescent, _) => coordinate_descent(&obj)?,
    };
    let d = matrix.n_cols();
    Ok(LogregModel {
        config: config.clone(),
        weights: theta[..d].to_vec(),
        intercept: theta[d],
        iterations,
    })
}
