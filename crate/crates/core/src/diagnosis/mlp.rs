use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{argmax, check_training};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a loss improvement of at least `tol` before stopping.
    pub patience: usize,
    pub tol: f64,
    pub batch_size: usize,
    /// L2 penalty on weights.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            learning_rate: 1e-3,
            max_epochs: 2000,
            patience: 200,
            tol: 1e-4,
            batch_size: 200,
            alpha: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

/// ReLU hidden layers, softmax output, cross-entropy objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub best_epoch: usize,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn step(&mut self, k: usize, params: &mut [f64], grad: &[f64], lr: f64) {
        let b1t = 1.0 - BETA1.powi(self.t);
        let b2t = 1.0 - BETA2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m[k].iter_mut().zip(self.v[k].iter_mut()))
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / b1t) / ((*v / b2t).sqrt() + ADAM_EPS);
        }
    }
}

impl Mlp {
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut buf = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(acts.last().unwrap(), &mut buf);
            if i + 1 < self.layers.len() {
                buf.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                softmax_in_place(&mut buf);
            }
            acts.push(buf.clone());
        }
        acts
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().unwrap()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }
}

/// Mini-batch Adam with a seeded shuffle and He-normal initialisation.
/// Training stops after `patience` epochs without improvement; it fails if
/// the loss becomes non-finite or never drops below its first value.
pub fn train_mlp(x: &[Vec<f64>], y: &[usize], n_classes: usize, params: &MlpParams) -> Result<(Mlp, TrainTrace)> {
    let d = check_training(x, y, n_classes)?;
    if params.hidden.contains(&0) || params.batch_size == 0 || !(params.learning_rate > 0.0) {
        return Err(Error::arg("invalid MLP parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut sizes = vec![d];
    sizes.extend(&params.hidden);
    sizes.push(n_classes);
    let layers: Vec<Layer> = sizes
        .windows(2)
        .map(|w| {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            Layer {
                inputs: w[0],
                outputs: w[1],
                w: (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect(),
                b: vec![0.0; w[1]],
            }
        })
        .collect();
    let mut net = Mlp {
        layers,
        epochs: 0,
        final_loss: f64::NAN,
    };
    let nl = net.layers.len();
    let mut adam = Adam {
        m: net
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]])
            .collect(),
        v: net
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]])
            .collect(),
        t: 0,
    };

    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    for epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(params.batch_size) {
            let mut gw: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
            let mut gb: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
            for &i in batch {
                let acts = net.activations(&x[i]);
                let p = &acts[nl];
                epoch_loss -= p[y[i]].max(1e-300).ln();
                let mut delta: Vec<f64> = p.clone();
                delta[y[i]] -= 1.0;
                for l in (0..nl).rev() {
                    let layer = &net.layers[l];
                    let input = &acts[l];
                    for o in 0..layer.outputs {
                        let row = &mut gw[l][o * layer.inputs..(o + 1) * layer.inputs];
                        for (g, &a) in row.iter_mut().zip(input) {
                            *g += delta[o] * a;
                        }
                        gb[l][o] += delta[o];
                    }
                    if l > 0 {
                        let mut prev = vec![0.0; layer.inputs];
                        for o in 0..layer.outputs {
                            let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                            for (pv, &w) in prev.iter_mut().zip(row) {
                                *pv += delta[o] * w;
                            }
                        }
                        for (pv, &a) in prev.iter_mut().zip(input) {
                            if a <= 0.0 {
                                *pv = 0.0;
                            }
                        }
                        delta = prev;
                    }
                }
            }
            let bs = batch.len() as f64;
            adam.t += 1;
            for (l, layer) in net.layers.iter_mut().enumerate() {
                let grad_w: Vec<f64> = gw[l]
                    .iter()
                    .zip(&layer.w)
                    .map(|(g, w)| g / bs + params.alpha * w / bs)
                    .collect();
                let grad_b: Vec<f64> = gb[l].iter().map(|g| g / bs).collect();
                adam.step(2 * l, &mut layer.w, &grad_w, params.learning_rate);
                adam.step(2 * l + 1, &mut layer.b, &grad_b, params.learning_rate);
            }
        }
        let l2: f64 = net.layers.iter().flat_map(|l| &l.w).map(|w| w * w).sum();
        let loss = epoch_loss / n as f64 + 0.5 * params.alpha * l2 / n as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("MLP loss became non-finite at epoch {epoch}")));
        }
        losses.push(loss);
        net.epochs = epoch + 1;
        net.final_loss = loss;
        if loss < best - params.tol {
            best = loss;
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                break;
            }
        }
    }
    if losses.len() > 1 && best_epoch == 0 && losses[0] <= losses.iter().copied().fold(f64::INFINITY, f64::min) {
        return Err(Error::Training(format!(
            "MLP loss never decreased: first {:.6}, last {:.6} after {} epochs",
            losses[0],
            losses[losses.len() - 1],
            losses.len()
        )));
    }
    Ok((net, TrainTrace { losses, best_epoch }))
}
