use serde::{Deserialize, Serialize};

use super::{argmax, check_training, class_counts};
use crate::error::Result;

/// Relative variance floor, scaled by the largest feature variance.
pub const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub log_prior: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

pub fn train_gnb(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<GaussianNb> {
    let d = check_training(x, y, n_classes)?;
    let n = x.len() as f64;
    let counts = class_counts(y, n_classes);

    let mut floor = 0.0f64;
    for f in 0..d {
        let m = x.iter().map(|r| r[f]).sum::<f64>() / n;
        let v = x.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / n;
        floor = floor.max(v);
    }
    let floor = if floor > 0.0 {
        VAR_SMOOTHING * floor
    } else {
        VAR_SMOOTHING
    };

    let mut mean = vec![vec![0.0; d]; n_classes];
    let mut var = vec![vec![floor; d]; n_classes];
    for c in 0..n_classes {
        if counts[c] == 0 {
            continue;
        }
        let rows: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        let k = rows.len() as f64;
        for f in 0..d {
            let m = rows.iter().map(|r| r[f]).sum::<f64>() / k;
            let v = rows.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / k;
            mean[c][f] = m;
            var[c][f] = v + floor;
        }
    }
    let log_prior = counts
        .iter()
        .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n).ln() })
        .collect();
    Ok(GaussianNb { log_prior, mean, var })
}

impl GaussianNb {
    pub fn log_posterior(&self, x: &[f64]) -> Vec<f64> {
        self.log_prior
            .iter()
            .enumerate()
            .map(|(c, &lp)| {
                if lp == f64::NEG_INFINITY {
                    return lp;
                }
                lp + x
                    .iter()
                    .zip(&self.mean[c])
                    .zip(&self.var[c])
                    .map(|((&xi, &m), &v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (xi - m).powi(2) / v))
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.log_posterior(x))
    }
}
