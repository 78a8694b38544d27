use serde::{Deserialize, Serialize};

use super::{argmax, check_training};
use crate::error::Result;

/// Multinomial logistic regression with an L2 penalty, fitted by full-batch
/// gradient descent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub n_classes: usize,
    /// Row-major `n_classes x (d + 1)`, bias last.
    pub w: Vec<f64>,
}

pub const LR_ITERATIONS: usize = 500;
pub const LR_STEP: f64 = 0.5;

pub fn train_lr(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<Logistic> {
    let d = check_training(x, y, n_classes)?;
    let stride = d + 1;
    let n = x.len() as f64;
    let lambda = 1.0 / n;
    let mut m = Logistic {
        n_classes,
        w: vec![0.0; n_classes * stride],
    };
    for _ in 0..LR_ITERATIONS {
        let mut g = vec![0.0; m.w.len()];
        for (xi, &yi) in x.iter().zip(y) {
            let p = m.proba(xi);
            for c in 0..n_classes {
                let r = p[c] - if c == yi { 1.0 } else { 0.0 };
                let row = &mut g[c * stride..(c + 1) * stride];
                for (gf, &v) in row.iter_mut().zip(xi) {
                    *gf += r * v;
                }
                row[d] += r;
            }
        }
        for c in 0..n_classes {
            for f in 0..stride {
                let k = c * stride + f;
                let reg = if f < d { lambda * m.w[k] } else { 0.0 };
                m.w[k] -= LR_STEP * (g[k] / n + reg);
            }
        }
    }
    Ok(m)
}

impl Logistic {
    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        let stride = x.len() + 1;
        let mut z: Vec<f64> = (0..self.n_classes)
            .map(|c| {
                let row = &self.w[c * stride..(c + 1) * stride];
                row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[x.len()]
            })
            .collect();
        let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in &mut z {
            *v = (*v - mx).exp();
            s += *v;
        }
        z.iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.proba(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub n_classes: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

pub fn train_knn(x: &[Vec<f64>], y: &[usize], n_classes: usize, k: usize) -> Result<Knn> {
    check_training(x, y, n_classes)?;
    Ok(Knn {
        k: k.max(1),
        n_classes,
        x: x.to_vec(),
        y: y.to_vec(),
    })
}

impl Knn {
    /// Majority of the `k` nearest training points; a tie goes to the tied
    /// class whose member is nearest.
    pub fn predict(&self, q: &[f64]) -> usize {
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, &y)| (x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), y))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &d[..self.k.min(d.len())];
        let mut votes = vec![0usize; self.n_classes];
        for &(_, c) in near {
            votes[c] += 1;
        }
        let top = votes.iter().copied().max().unwrap_or(0);
        near.iter().find(|&&(_, c)| votes[c] == top).map_or(0, |&(_, c)| c)
    }
}
