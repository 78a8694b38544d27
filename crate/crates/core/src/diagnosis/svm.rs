use serde::{Deserialize, Serialize};

use super::check_training;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// `None` selects `1 / (d * var(X))`.
    pub gamma: Option<f64>,
    /// KKT violation tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

#[inline]
fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// One binary machine: `f(x) = sum_i coef_i K(sv_i, x) - rho`, positive for
/// the first class of the pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub pos: usize,
    pub neg: usize,
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Every alpha of the dual solution, including zeros.
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64], gamma: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * rbf(s, x, gamma))
            .sum::<f64>()
            - self.rho
    }
}

/// Dual SMO with maximal-violating-pair selection using second-order
/// information for the second index.
fn smo(x: &[&Vec<f64>], y: &[f64], params: &SvmParams, gamma: f64) -> (Vec<f64>, f64, usize, bool) {
    let n = x.len();
    let c = params.c;
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| rbf(x[i], x[j], gamma)).collect())
        .collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iter = 0;
    let mut converged = false;
    let tau = 1e-12;
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    while iter < params.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let yg = y[t] * grad[t];
            if yg >= gmax2 {
                gmax2 = yg;
            }
            if i == usize::MAX {
                continue;
            }
            let b = gmax + yg;
            if b > 0.0 {
                let a = (k[i][i] + k[t][t] - 2.0 * k[i][t]).max(tau);
                let obj = -(b * b) / a;
                if obj <= obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 < params.tol {
            converged = true;
            break;
        }
        iter += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k[i][j];
        if y[i] != y[j] {
            let quad = (k[i][i] + k[j][j] + 2.0 * qij).max(tau);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
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
            let quad = (k[i][i] + k[j][j] - 2.0 * qij).max(tau);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
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
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[i][t] * di + y[j] * k[j][t] * dj);
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
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
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    (alpha, rho, iter, converged)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    pub n_classes: usize,
    pub gamma: f64,
    pub c: f64,
    pub machines: Vec<BinarySvm>,
}

/// Gamma of the `scale` heuristic: `1 / (d * var(X))` over all entries.
pub fn scale_gamma(x: &[Vec<f64>]) -> f64 {
    let d = x.first().map_or(1, |r| r.len()).max(1);
    let all: Vec<f64> = x.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let m = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0 / d as f64
    }
}

/// One-vs-one RBF SVMs over every pair of classes present in `y`.
pub fn train_svm_rbf(x: &[Vec<f64>], y: &[usize], n_classes: usize, params: SvmParams) -> Result<Svm> {
    check_training(x, y, n_classes)?;
    let gamma = params.gamma.unwrap_or_else(|| scale_gamma(x));
    let present: Vec<usize> = (0..n_classes).filter(|c| y.contains(c)).collect();
    let mut machines = Vec::new();
    for (a, &pos) in present.iter().enumerate() {
        for &neg in &present[a + 1..] {
            let idx: Vec<usize> = (0..x.len()).filter(|&i| y[i] == pos || y[i] == neg).collect();
            let xs: Vec<&Vec<f64>> = idx.iter().map(|&i| &x[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| if y[i] == pos { 1.0 } else { -1.0 }).collect();
            let (alpha, rho, iterations, converged) = smo(&xs, &ys, &params, gamma);
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for (t, &a) in alpha.iter().enumerate() {
                if a > 0.0 {
                    support.push(xs[t].clone());
                    coef.push(a * ys[t]);
                }
            }
            machines.push(BinarySvm {
                pos,
                neg,
                support,
                coef,
                rho,
                alpha,
                iterations,
                converged,
            });
        }
    }
    Ok(Svm {
        n_classes,
        gamma,
        c: params.c,
        machines,
    })
}

impl Svm {
    /// Pairwise vote; ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for m in &self.machines {
            if m.decision(x, self.gamma) > 0.0 {
                votes[m.pos] += 1;
            } else {
                votes[m.neg] += 1;
            }
        }
        super::argmax(&votes.iter().map(|&v| v as f64).collect::<Vec<_>>())
    }
}
