//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved in its 2n-variable form
//!
//! ```text
//! min  ½ aᵀQa + pᵀa   s.t.  Σ s_t a_t = 0,  0 ≤ a_t ≤ C
//! ```
//!
//! with `a = [α; α*]`, `s = [+1; -1]`, `p = [ε - y; ε + y]` and
//! `Q_tu = s_t s_u k(x_t, x_u)`, by sequential minimal optimization using
//! second-order working-set selection. The regression coefficients are
//! `β = α - α*`. Features and targets are standardized with training
//! statistics before solving.

use serde::{Deserialize, Serialize};

use super::scaler::{FeatureScaler, TargetScaler};
use super::{ModelError, Result};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Hard cap on SMO iterations.
pub const MAX_ITERATIONS: usize = 1_000_000;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    /// RBF width, in 1 / (standardized feature units)².
    pub gamma: f64,
    /// Penalty factor C.
    pub cost: f64,
    /// Tube half-width in standardized target units.
    pub epsilon: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
}

impl SvrParams {
    pub fn new(gamma: f64, cost: f64) -> Self {
        Self {
            gamma,
            cost,
            epsilon: DEFAULT_EPSILON,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.cost > 0.0
            && self.epsilon >= 0.0
            && self.tolerance > 0.0
            && [self.gamma, self.cost, self.epsilon, self.tolerance]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ModelError::Contract(format!(
                "invalid SVR parameters: {self:?}"
            )))
        }
    }
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Result of the dual solve on standardized data.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// `β_i = α_i - α*_i`, each in `[-C, C]`.
    pub beta: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub violation: f64,
    /// Dual objective `-(½ aᵀQa + pᵀa)` after every iteration, when requested.
    pub objective_trace: Vec<f64>,
}

/// Solves the epsilon-SVR dual for a precomputed kernel matrix (row-major,
/// `n × n`).
pub fn solve_dual(
    kernel: &[f64],
    y: &[f64],
    cost: f64,
    epsilon: f64,
    tolerance: f64,
    max_iterations: usize,
    trace: bool,
) -> Result<DualSolution> {
    let n = y.len();
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let k = |t: usize, u: usize| kernel[(t % n) * n + (u % n)];
    let q = |t: usize, u: usize| sign(t) * sign(u) * k(t, u);

    let p: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                epsilon - y[t]
            } else {
                epsilon + y[t - n]
            }
        })
        .collect();
    let mut alpha = vec![0.0; l];
    let mut grad = p.clone();
    let mut objective_trace = Vec::new();
    let objective = |alpha: &[f64], grad: &[f64]| {
        // ½ aᵀQa + pᵀa = ½ Σ a_t (G_t + p_t)
        -0.5 * alpha
            .iter()
            .zip(grad)
            .zip(&p)
            .map(|((a, g), pt)| a * (g + pt))
            .sum::<f64>()
    };
    if trace {
        objective_trace.push(objective(&alpha, &grad));
    }

    let in_up = |t: usize, a: f64| if t < n { a < cost } else { a > 0.0 };
    let in_low = |t: usize, a: f64| if t < n { a > 0.0 } else { a < cost };

    let mut iterations = 0;
    let violation = loop {
        // working set selection (second order)
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..l {
            if in_up(t, alpha[t]) {
                let v = -sign(t) * grad[t];
                if v >= g_max {
                    g_max = v;
                    i_sel = t;
                }
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..l {
            if !in_low(t, alpha[t]) {
                continue;
            }
            let v = sign(t) * grad[t];
            if v >= g_max2 {
                g_max2 = v;
            }
            if i_sel == usize::MAX {
                continue;
            }
            let b = g_max + v;
            if b > 0.0 {
                let a = k(i_sel, i_sel) + k(t, t) - 2.0 * sign(i_sel) * sign(t) * q(i_sel, t);
                let a = if a > 0.0 { a } else { TAU };
                let o = -(b * b) / a;
                if o <= obj_min {
                    obj_min = o;
                    j_sel = t;
                }
            }
        }
        let gap = g_max + g_max2;
        if gap < tolerance || j_sel == usize::MAX || i_sel == usize::MAX {
            break gap.max(0.0);
        }
        if iterations >= max_iterations {
            return Err(ModelError::Convergence {
                iterations,
                violation: gap,
            });
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let q_ij = q(i, j);
        let quad = {
            let a = k(i, i) + k(j, j) - 2.0 * sign(i) * sign(j) * q_ij;
            if a > 0.0 {
                a
            } else {
                TAU
            }
        };
        if sign(i) != sign(j) {
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
                if alpha[i] > cost {
                    alpha[i] = cost;
                    alpha[j] = cost - diff;
                }
            } else if alpha[j] > cost {
                alpha[j] = cost;
                alpha[i] = cost + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > cost {
                if alpha[i] > cost {
                    alpha[i] = cost;
                    alpha[j] = sum - cost;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cost {
                if alpha[j] > cost {
                    alpha[j] = cost;
                    alpha[i] = sum - cost;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let d_i = alpha[i] - old_i;
        let d_j = alpha[j] - old_j;
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * d_i + q(t, j) * d_j;
        }
        if trace {
            objective_trace.push(objective(&alpha, &grad));
        }
    };

    // bias from free variables, else the midpoint of the feasible interval
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..l {
        let yg = sign(t) * grad[t];
        let at_upper = alpha[t] >= cost;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        0.5 * (upper + lower)
    };
    let beta = (0..n).map(|i| alpha[i] - alpha[i + n]).collect();
    Ok(DualSolution {
        beta,
        bias: -rho,
        iterations,
        violation,
        objective_trace,
    })
}

/// Row-major RBF kernel matrix over standardized rows.
pub fn kernel_matrix(rows: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = rows.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf(gamma, &rows[i], &rows[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    params: SvrParams,
    feature_scaler: FeatureScaler,
    target_scaler: TargetScaler,
    /// Standardized support vectors.
    support: Vec<Vec<f64>>,
    /// Their coefficients `β_i`.
    coef: Vec<f64>,
    /// Bias in standardized target units.
    bias: f64,
}

impl SvrModel {
    pub fn fit(rows: &[&[f64]], targets: &[f64], params: &SvrParams) -> Result<Self> {
        Self::fit_traced(rows, targets, params, false).map(|(m, _)| m)
    }

    /// Like [`SvrModel::fit`], also returning the raw dual solution (with the
    /// per-iteration objective when `trace` is set).
    pub fn fit_traced(
        rows: &[&[f64]],
        targets: &[f64],
        params: &SvrParams,
        trace: bool,
    ) -> Result<(Self, DualSolution)> {
        params.validate()?;
        let feature_scaler = FeatureScaler::fit(rows);
        let target_scaler = TargetScaler::fit(targets);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| feature_scaler.transform(r)).collect();
        let y: Vec<f64> = targets
            .iter()
            .map(|&t| target_scaler.transform(t))
            .collect();
        let kernel = kernel_matrix(&x, params.gamma);
        let solution = solve_dual(
            &kernel,
            &y,
            params.cost,
            params.epsilon,
            params.tolerance,
            MAX_ITERATIONS,
            trace,
        )?;
        let (support, coef) = x
            .into_iter()
            .zip(&solution.beta)
            .filter(|(_, b)| **b != 0.0)
            .map(|(row, b)| (row, *b))
            .unzip();
        let model = Self {
            params: params.clone(),
            feature_scaler,
            target_scaler,
            support,
            coef,
            bias: solution.bias,
        };
        Ok((model, solution))
    }

    pub fn params(&self) -> &SvrParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.feature_scaler.mean.len()
    }

    pub fn target_scaler(&self) -> TargetScaler {
        self.target_scaler
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Decision value in standardized target units.
    pub fn predict_standardized(&self, x: &[f64]) -> f64 {
        let z = self.feature_scaler.transform(x);
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, b)| b * rbf(self.params.gamma, sv, &z))
            .sum::<f64>()
            + self.bias
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.target_scaler.inverse(self.predict_standardized(x))
    }
}
