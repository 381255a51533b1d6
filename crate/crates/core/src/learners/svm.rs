//! Soft-margin kernel SVM trained by SMO on the dual
//!
//!   min_a  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C_i,  y'a = 0,
//!
//! with Q_ij = y_i y_j K(x_i, x_j) and C_i = C * w(y_i). The first index of
//! each working pair is the maximal KKT violator; the second maximizes the
//! second-order decrease of the objective among violators. The kernel matrix
//! is computed once and kept in memory.

use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use super::{class_weights, resolve_gamma, LearnError, SvmConfig};
use crate::features::{FeatureMatrix, Row};

pub const TOLERANCE: f64 = 1e-3;
/// Iteration cap, in passes over the training set.
pub const MAX_PASSES: usize = 10_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub config: SvmConfig,
    pub kernel: KernelSpec,
    /// Support vectors (rows with a_i > 0).
    pub support: FeatureMatrix,
    /// a_i y_i for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub n_features: usize,
    /// Final maximal KKT violation m(a) - M(a).
    pub kkt_gap: f64,
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision(&self, x: &Row<'_>) -> f64 {
        let mut f = self.bias;
        for (i, coef) in self.dual_coef.iter().enumerate() {
            f += coef * self.kernel.eval(&self.support.row(i), x);
        }
        f
    }
}

/// Raw solver output, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub upper: Vec<f64>,
    pub y: Vec<f64>,
    pub gradient: Vec<f64>,
    pub bias: f64,
    pub kkt_gap: f64,
    pub iterations: usize,
}

fn kernel_matrix(matrix: &FeatureMatrix, kernel: &KernelSpec) -> Vec<f64> {
    let n = matrix.n_rows();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        let xi = matrix.row(i);
        for j in i..n {
            let v = kernel.eval(&xi, &matrix.row(j));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn in_up(a: f64, c: f64, y: f64) -> bool {
    if y > 0.0 {
        a < c
    } else {
        a > 0.0
    }
}

fn in_low(a: f64, c: f64, y: f64) -> bool {
    if y > 0.0 {
        a > 0.0
    } else {
        a < c
    }
}

/// Solves the dual for labels `y` in {-1, +1} and per-sample bounds `upper`.
pub fn solve_dual(k: &[f64], y: &[f64], upper: &[f64], tol: f64, max_iter: usize) -> Result<DualSolution, LearnError> {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let kkt_gap = loop {
        // i: maximal violator in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], upper[t], y[t]) {
                let v = -y[t] * grad[t];
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i != usize::MAX {
            let kii = k[i * n + i];
            for t in 0..n {
                if !in_low(alpha[t], upper[t], y[t]) {
                    continue;
                }
                let v = y[t] * grad[t];
                gmax2 = gmax2.max(v);
                let diff = gmax + v;
                if diff > 0.0 {
                    let mut quad = kii + k[t * n + t] - 2.0 * k[i * n + t];
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -diff * diff / quad;
                    if obj <= best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        let gap = gmax + gmax2;
        if i == usize::MAX || j == usize::MAX || gap < tol {
            break gap.max(0.0);
        }
        if iterations >= max_iter {
            return Err(LearnError::Convergence {
                solver: "smo",
                iterations,
                residual: gap,
            });
        }
        iterations += 1;

        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
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
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[t * n + i] * di + y[j] * k[t * n + j] * dj);
        }
    };

    // Bias: average over free vectors, else the midpoint of the feasible range.
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
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
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(DualSolution {
        alpha,
        upper: upper.to_vec(),
        y: y.to_vec(),
        gradient: grad,
        bias: -rho,
        kkt_gap,
        iterations,
    })
}

pub fn fit(config: &SvmConfig, matrix: &FeatureMatrix) -> Result<SvmModel, LearnError> {
    let kernel = KernelSpec {
        kind: config.kernel,
        gamma: resolve_gamma(config.gamma, matrix),
        degree: config.degree,
        coef0: config.coef0,
    };
    let (w0, w1) = class_weights(config.class_weight, matrix.labels())?;
    let y: Vec<f64> = matrix
        .labels()
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect();
    let upper: Vec<f64> = matrix
        .labels()
        .iter()
        .map(|&l| config.c * if l == 1 { w1 } else { w0 })
        .collect();
    let k = kernel_matrix(matrix, &kernel);
    let n = matrix.n_rows();
    let sol = solve_dual(&k, &y, &upper, TOLERANCE, MAX_PASSES.saturating_mul(n.max(1)))?;
    let support_idx: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(SvmModel {
        config: config.clone(),
        kernel,
        support: matrix.select(&support_idx),
        dual_coef: support_idx.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
        bias: sol.bias,
        n_features: matrix.n_cols(),
        kkt_gap: sol.kkt_gap,
        iterations: sol.iterations,
    })
}

/// Solves the dual directly on `matrix` (for inspection of the multipliers).
pub fn fit_dual(config: &SvmConfig, matrix: &FeatureMatrix) -> Result<DualSolution, LearnError> {
    let kernel = KernelSpec {
        kind: config.kernel,
        gamma: resolve_gamma(config.gamma, matrix),
        degree: config.degree,
        coef0: config.coef0,
    };
    let (w0, w1) = class_weights(config.class_weight, matrix.labels())?;
    let y: Vec<f64> = matrix
        .labels()
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect();
    let upper: Vec<f64> = matrix
        .labels()
        .iter()
        .map(|&l| config.c * if l == 1 { w1 } else { w0 })
        .collect();
    let k = kernel_matrix(matrix, &kernel);
    solve_dual(
        &k,
        &y,
        &upper,
        TOLERANCE,
        MAX_PASSES.saturating_mul(matrix.n_rows().max(1)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ClassWeightMode, GammaMode, Kernel};

    fn toy() -> FeatureMatrix {
        // mirror images across x = 0, closest pairs at x = -1 and x = 1
        FeatureMatrix::from_dense_rows(
            &[
                vec![-1.0, 0.0],
                vec![-1.0, 1.0],
                vec![-2.0, 0.5],
                vec![1.0, 0.0],
                vec![1.0, 1.0],
                vec![2.0, 0.5],
            ],
            vec![0, 0, 0, 1, 1, 1],
        )
        .unwrap()
    }

    fn cfg(kernel: Kernel) -> SvmConfig {
        SvmConfig {
            kernel,
            gamma: GammaMode::Scale,
            class_weight: ClassWeightMode::Balanced,
            c: 10.0,
            degree: 3,
            coef0: 0.0,
        }
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let m = toy();
        for kernel in [Kernel::Linear, Kernel::Rbf, Kernel::Poly] {
            let model = fit(&cfg(kernel), &m).unwrap();
            assert!(model.kkt_gap <= TOLERANCE);
            for r in 0..m.n_rows() {
                let f = model.decision(&m.row(r));
                assert_eq!(u8::from(f > 0.0), m.labels()[r], "{kernel:?} row {r}");
            }
        }
    }

    #[test]
    fn linear_margin_matches_geometry() {
        let sol = fit_dual(&cfg(Kernel::Linear), &toy()).unwrap();
        let ya: f64 = sol.alpha.iter().zip(&sol.y).map(|(a, y)| a * y).sum();
        assert!(ya.abs() <= 1e-8);
        for (a, c) in sol.alpha.iter().zip(&sol.upper) {
            assert!(*a >= 0.0 && a <= c);
        }
        // w = sum a_i y_i x_i; the max-margin separator here is x = 0, w = (1, 0)
        let m = toy();
        let mut w = [0.0; 2];
        for i in 0..6 {
            for (c, v) in m.row(i).entries() {
                w[c] += sol.alpha[i] * sol.y[i] * v;
            }
        }
        assert!((w[0] - 1.0).abs() < 1e-2 && w[1].abs() < 1e-2, "{w:?}");
        assert!(sol.bias.abs() < 1e-2);
    }
}
