//! Multinomial logistic regression on sparse rows, fitted with L-BFGS.
//!
//! Minimizes `C * sum_i CE(x_i, y_i) + ||W||^2 / 2` (intercepts are not
//! penalized), scaled by `1/n` for conditioning.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Sparse feature row: `(feature index, value)` pairs.
pub type SparseRow = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the largest gradient component falls below this.
    pub tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { c: 1.0, max_iter: 1000, tol: 1e-4, memory: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    classes: usize,
    dim: usize,
    /// `classes x dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    iterations: usize,
}

struct Problem<'a> {
    rows: &'a [SparseRow],
    labels: &'a [usize],
    classes: usize,
    dim: usize,
    c: f64,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    /// Objective value; fills `grad` (same layout as the parameters:
    /// weights then biases).
    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let (w, b) = params.split_at(self.classes * self.dim);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = self.rows.len() as f64;
        let mut loss = 0.0;
        let mut logits = vec![0.0; self.classes];
        for (row, &y) in self.rows.iter().zip(self.labels) {
            for (c, z) in logits.iter_mut().enumerate() {
                *z = b[c] + row.iter().map(|&(j, v)| w[c * self.dim + j as usize] * v).sum::<f64>();
            }
            let lse = log_sum_exp(&logits);
            loss += lse - logits[y];
            for c in 0..self.classes {
                let g = self.c * (libm::exp(logits[c] - lse) - if c == y { 1.0 } else { 0.0 });
                for &(j, v) in row {
                    grad[c * self.dim + j as usize] += g * v;
                }
                grad[self.classes * self.dim + c] += g;
            }
        }
        let mut reg = 0.0;
        for (g, &wi) in grad.iter_mut().zip(w) {
            *g += wi;
            reg += wi * wi;
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (self.c * loss + 0.5 * reg) / n
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(z.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl LogisticRegression {
    pub fn fit(rows: &[SparseRow], labels: &[usize], classes: usize, dim: usize, config: &LogRegConfig) -> Self {
        assert_eq!(rows.len(), labels.len());
        assert!(!rows.is_empty() && classes >= 2);
        let mut present = vec![false; classes];
        labels.iter().for_each(|&l| present[l] = true);
        if present.iter().filter(|p| **p).count() == 1 {
            // Only one class seen: the optimum pushes the other intercepts to
            // -inf, so write the limit directly.
            let bias = present.iter().map(|&p| if p { 0.0 } else { -50.0 }).collect();
            return Self { classes, dim, weights: vec![0.0; classes * dim], bias, iterations: 0 };
        }

        let problem = Problem { rows, labels, classes, dim, c: config.c };
        let n = problem.n_params();
        let mut x = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut f = problem.evaluate(&x, &mut g);
        let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
        let mut iterations = 0;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];

        while iterations < config.max_iter && max_abs(&g) > config.tol {
            iterations += 1;
            // Two-loop recursion for the search direction.
            let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut alphas = Vec::with_capacity(history.len());
            for (s, y, rho) in history.iter().rev() {
                let a = rho * dot(s, &d);
                d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
                alphas.push(a);
            }
            let gamma = history.back().map_or(1.0 / libm::sqrt(dot(&g, &g)).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
            d.iter_mut().for_each(|di| *di *= gamma);
            for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &d);
                d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
            }
            let mut slope = dot(&g, &d);
            if slope >= 0.0 {
                history.clear();
                d = g.iter().map(|v| -v).collect();
                slope = -dot(&g, &g);
            }

            // Backtracking Armijo line search.
            let mut step = 1.0;
            let mut f_new;
            loop {
                x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
                f_new = problem.evaluate(&x_new, &mut g_new);
                if f_new <= f + 1e-4 * step * slope || step < 1e-12 {
                    break;
                }
                step *= 0.5;
            }
            if step < 1e-12 {
                break;
            }

            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 {
                if history.len() == config.memory {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }
            let converged = (f - f_new).abs() <= 1e-12 * f.abs().max(1.0);
            core::mem::swap(&mut x, &mut x_new);
            core::mem::swap(&mut g, &mut g_new);
            f = f_new;
            if converged {
                break;
            }
        }

        let bias = x.split_off(classes * dim);
        Self { classes, dim, weights: x, bias, iterations }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn predict_proba(&self, row: &[(u32, f64)]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                self.bias[c]
                    + row
                        .iter()
                        .filter(|(j, _)| (*j as usize) < self.dim)
                        .map(|&(j, v)| self.weights[c * self.dim + j as usize] * v)
                        .sum::<f64>()
            })
            .collect();
        let lse = log_sum_exp(&logits);
        let mut p: Vec<f64> = logits.iter().map(|z| libm::exp(z - lse)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }
}

/// Dense vector as a sparse row.
pub fn dense_row(v: &[f64]) -> SparseRow {
    v.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect()
}
