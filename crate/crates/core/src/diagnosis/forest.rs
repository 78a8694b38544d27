use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, check_training};
use crate::error::Result;
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    /// Mean decrease in impurity per feature, averaged over trees.
    pub importance: Vec<f64>,
    /// Standard deviation of the per-tree importances.
    pub importance_std: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 1000, seed: 0 }
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    n_root: f64,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Lowest weighted child impurity over thresholds of one feature, or
    /// `None` when the feature is constant in the node.
    fn best_for_feature(&self, idx: &[usize], f: usize, parent: &[usize]) -> Option<BestSplit> {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
        let n = order.len();
        if self.x[order[0]][f] == self.x[order[n - 1]][f] {
            return None;
        }
        let mut left = vec![0usize; self.n_classes];
        let mut right = parent.to_vec();
        let mut best: Option<BestSplit> = None;
        for k in 0..n - 1 {
            let c = self.y[order[k]];
            left[c] += 1;
            right[c] -= 1;
            let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.as_ref().is_none_or(|s| score < s.score) {
                let mid = a + (b - a) / 2.0;
                best = Some(BestSplit {
                    feature: f,
                    threshold: if mid < b { mid } else { a },
                    score,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        let majority = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
        self.nodes.push(Node::Leaf { class: majority });
        let impurity = gini(&counts, idx.len());
        if impurity <= 0.0 {
            return id;
        }

        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        for &f in &features {
            if visited >= self.mtry {
                break;
            }
            let Some(s) = self.best_for_feature(&idx, f, &counts) else {
                continue;
            };
            visited += 1;
            if best.as_ref().is_none_or(|b| s.score < b.score) {
                best = Some(s);
            }
        }
        let Some(split) = best else { return id };

        let n = idx.len() as f64;
        self.importance[split.feature] += n / self.n_root * (impurity - split.score);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Bagged CART trees on Gini impurity with `floor(sqrt(d))` candidate
/// features per split, grown until leaves are pure or unsplittable.
/// Tree `t` draws from its own ChaCha stream, so the forest does not depend
/// on thread scheduling.
pub fn train_rf(x: &[Vec<f64>], y: &[usize], n_classes: usize, params: ForestParams) -> Result<RandomForest> {
    let d = check_training(x, y, n_classes)?;
    let n = x.len();
    let mtry = ((d as f64).sqrt().floor() as usize).max(1);
    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                x,
                y,
                n_classes,
                mtry,
                n_root: n as f64,
                nodes: Vec::new(),
                importance: vec![0.0; d],
            };
            b.grow(sample, &mut rng);
            let total: f64 = b.importance.iter().sum();
            if total > 0.0 {
                b.importance.iter_mut().for_each(|v| *v /= total);
            }
            (Tree { nodes: b.nodes }, b.importance)
        })
        .collect();
    let mut importance = vec![0.0; d];
    let mut importance_std = vec![0.0; d];
    for f in 0..d {
        let vals: Vec<f64> = grown.iter().map(|(_, imp)| imp[f]).collect();
        importance[f] = stats::mean(&vals).unwrap_or(0.0);
        importance_std[f] = stats::std_pop(&vals).unwrap_or(0.0);
    }
    Ok(RandomForest {
        n_classes,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        importance,
        importance_std,
        seed: params.seed,
    })
}

impl RandomForest {
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut v = vec![0; self.n_classes];
        for t in &self.trees {
            v[t.predict(x)] += 1;
        }
        v
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.votes(x).iter().map(|&c| c as f64).collect::<Vec<_>>())
    }
}
