use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Binned, Tree, TreeParams};
use crate::irt::sigmoid;
use crate::sim::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub classification: bool,
}

/// Bootstrap-aggregated trees with per-split feature subsampling: √p features
/// for classification, p/3 for regression (at least one).
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], params: ForestParams, seed: u64) -> Forest {
    let n = x.nrows();
    let p = x.ncols();
    let max_features = if params.classification {
        ((p as f64).sqrt() as usize).max(1)
    } else {
        (p / 3).max(1)
    };
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        max_features: Some(max_features),
    };
    let data = Binned::new(x);
    let trees = (0..params.n_estimators)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            Tree::fit(&data, y, rows, tree_params, &mut rng)
        })
        .collect();
    Forest { trees }
}

impl Forest {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let k = self.trees.len().max(1) as f64;
        (0..x.nrows())
            .map(|i| self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>() / k)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub classification: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    pub classification: bool,
    /// Training loss after each stage, starting with the base score; squared
    /// error per row for regression, log loss per row for classification.
    pub train_loss: Vec<f64>,
}

/// log(1 + eᶻ) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() }
}

fn mean_loss(y: &[f64], f: &[f64], classification: bool) -> f64 {
    let n = y.len() as f64;
    if classification {
        y.iter().zip(f).map(|(t, z)| softplus(*z) - t * z).sum::<f64>() / n
    } else {
        y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
    }
}

/// Stagewise boosting with trees on all features.
///
/// Regression fits each tree to the current residuals. Classification fits
/// each tree to the log-loss gradient and sets every leaf to its Newton step;
/// if the shrunken step would raise that leaf's loss it is halved until it
/// does not, so the training loss never increases between stages.
pub fn fit_gbt(x: &DMatrix<f64>, y: &[f64], params: GbtParams, seed: u64) -> Gbt {
    let n = x.nrows();
    let data = Binned::new(x);
    let tree_params = TreeParams {
        max_depth: Some(params.max_depth),
        min_samples_split: 2,
        max_features: None,
    };
    let mean = y.iter().sum::<f64>() / n as f64;
    let base = if params.classification {
        let p = mean.clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).ln()
    } else {
        mean
    };
    let lr = params.learning_rate;
    let mut f = vec![base; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut train_loss = vec![mean_loss(y, &f, params.classification)];
    for stage in 0..params.n_estimators {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stage as u64]));
        let target: Vec<f64> = if params.classification {
            (0..n).map(|i| y[i] - sigmoid(f[i])).collect()
        } else {
            (0..n).map(|i| y[i] - f[i]).collect()
        };
        let (mut tree, members) =
            Tree::fit_with_members(&data, &target, (0..n).collect(), tree_params, &mut rng);
        if params.classification {
            for (node, rows) in members.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                let g: f64 = rows.iter().map(|&i| target[i]).sum();
                let h: f64 = rows.iter().map(|&i| {
                    let s = sigmoid(f[i]);
                    s * (1.0 - s)
                }).sum();
                let mut v = if h > 1e-12 { g / h } else { 0.0 };
                let leaf_loss = |shift: f64| -> f64 {
                    rows.iter().map(|&i| softplus(f[i] + shift) - y[i] * (f[i] + shift)).sum()
                };
                let before = leaf_loss(0.0);
                for _ in 0..60 {
                    if leaf_loss(lr * v) <= before {
                        break;
                    }
                    v *= 0.5;
                }
                tree.set_leaf(node, v);
            }
        }
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += lr * tree.predict_row(x, i);
        }
        train_loss.push(mean_loss(y, &f, params.classification));
        trees.push(tree);
    }
    Gbt { base, learning_rate: lr, trees, classification: params.classification, train_loss }
}

impl Gbt {
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.base
                    + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>()
            })
            .collect()
    }

    /// Predicted value (regression) or positive-class probability.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let d = self.decision(x);
        if self.classification {
            d.into_iter().map(sigmoid).collect()
        } else {
            d
        }
    }
}
