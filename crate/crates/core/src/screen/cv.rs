use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    auc, classification_metrics, design_matrix, fit_model, regression_metrics, rmse, MetricSet,
    ModelSpec, ScreenError, Target,
};
use crate::irt::FlagThresholds;
use crate::model::AnalysisTuple;
use crate::sim::derive_seed;

/// Seed-path markers that cannot collide with fold or grid indices.
const SPLIT: u64 = u64::MAX;
const REFIT: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub n_folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
    /// Ignored for regression targets.
    pub stratified: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { n_folds: 5, inner_folds: 5, seed: 7, stratified: true }
    }
}

/// Partitions `0..n` into `k` folds after a seeded shuffle. With labels, each
/// class is dealt round-robin so every fold gets its share of positives.
pub fn stratified_folds(n: usize, labels: Option<&[bool]>, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let groups: Vec<Vec<usize>> = match labels {
        Some(l) => vec![
            (0..n).filter(|&i| l[i]).collect(),
            (0..n).filter(|&i| !l[i]).collect(),
        ],
        None => vec![(0..n).collect()],
    };
    let mut slot = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub spec: ModelSpec,
    /// Mean inner-CV score of the chosen spec (RMSE or AUC); `None` when no
    /// grid search ran.
    pub inner_score: Option<f64>,
    pub n_test: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub target: Target,
    /// Most frequent per-fold choice; ties go to the earlier grid entry.
    pub best_spec: ModelSpec,
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold held-out metrics.
    pub metrics: MetricSet,
    /// Held-out prediction for every item, in input order.
    pub oof_predictions: Vec<f64>,
    /// Target value for every item, in input order.
    pub truth: Vec<f64>,
}

fn map_cells<T: Send, F>(cells: Vec<(usize, usize)>, f: F) -> Vec<T>
where
    F: Fn(usize, usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cells.into_par_iter().map(|(a, b)| f(a, b)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cells.into_iter().map(|(a, b)| f(a, b)).collect()
    }
}

fn score(classification: bool, truth: &[f64], pred: &[f64]) -> Option<f64> {
    if classification {
        let labels: Vec<bool> = truth.iter().map(|&v| v > 0.5).collect();
        auc(pred, &labels).ok()
    } else {
        Some(rmse(truth, pred))
    }
}

/// Nested cross-validation: the outer folds estimate held-out performance,
/// an inner k-fold grid search inside each outer training set picks the spec
/// (lowest RMSE or highest AUC; ties go to the earlier grid entry).
pub fn cv_evaluate(
    data: &[AnalysisTuple],
    target: Target,
    thresholds: &FlagThresholds,
    grid: &[ModelSpec],
    cv: &CvConfig,
) -> Result<CvResult, ScreenError> {
    if grid.is_empty() {
        return Err(ScreenError::EmptyGrid);
    }
    if cv.n_folds < 2 || cv.inner_folds < 2 {
        return Err(ScreenError::InvalidSpec("fold counts must be at least 2".into()));
    }
    let n = data.len();
    if n < 5 * cv.n_folds {
        return Err(ScreenError::InsufficientData { n, required: 5 * cv.n_folds });
    }
    let classification = target.is_classification();
    let x = design_matrix(data);
    let y = target.values(data, thresholds);
    let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
    if classification {
        let positives = labels.iter().filter(|&&l| l).count();
        let negatives = n - positives;
        if positives < cv.n_folds || negatives < cv.n_folds {
            return Err(ScreenError::InsufficientClass { positives, negatives, required: cv.n_folds });
        }
    }
    let stratify = classification && cv.stratified;
    let outer = stratified_folds(n, stratify.then_some(labels.as_slice()), cv.n_folds, derive_seed(cv.seed, &[SPLIT]));

    let train_of = |o: usize| -> Vec<usize> {
        let mut in_test = vec![false; n];
        for &i in &outer[o] {
            in_test[i] = true;
        }
        (0..n).filter(|&i| !in_test[i]).collect()
    };
    // Inner folds, as indices into the outer training rows.
    let inner: Vec<Vec<Vec<usize>>> = (0..cv.n_folds)
        .map(|o| {
            let train = train_of(o);
            let sub_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let k = if classification {
                let pos = sub_labels.iter().filter(|&&l| l).count();
                cv.inner_folds.min(pos).min(train.len() - pos)
            } else {
                cv.inner_folds
            };
            if grid.len() == 1 || k < 2 {
                return Vec::new();
            }
            let strat = (stratify || classification).then_some(sub_labels.as_slice());
            stratified_folds(train.len(), strat, k, derive_seed(cv.seed, &[o as u64, SPLIT]))
        })
        .collect();

    let rows = |idx: &[usize]| -> (DMatrix<f64>, Vec<f64>) {
        (x.select_rows(idx), idx.iter().map(|&i| y[i]).collect())
    };

    let cells: Vec<(usize, usize)> = (0..cv.n_folds)
        .flat_map(|o| (0..grid.len()).map(move |g| (o, g)))
        .filter(|&(o, _)| !inner[o].is_empty())
        .collect();
    let cell_scores: Vec<((usize, usize), Option<f64>)> = map_cells(cells, |o, g| {
        let train = train_of(o);
        let folds = &inner[o];
        let mut total = 0.0;
        for (f, val) in folds.iter().enumerate() {
            let mut in_val = vec![false; train.len()];
            for &j in val {
                in_val[j] = true;
            }
            let fit_rows: Vec<usize> = (0..train.len()).filter(|&j| !in_val[j]).map(|j| train[j]).collect();
            let val_rows: Vec<usize> = val.iter().map(|&j| train[j]).collect();
            let (xt, yt) = rows(&fit_rows);
            let (xv, yv) = rows(&val_rows);
            let seed = derive_seed(cv.seed, &[o as u64, f as u64, g as u64]);
            let Ok(model) = fit_model(&grid[g], &xt, &yt, classification, seed) else {
                return ((o, g), None);
            };
            match score(classification, &yv, &model.predict(&xv)) {
                Some(s) => total += s,
                None => return ((o, g), None),
            }
        }
        ((o, g), Some(total / folds.len() as f64))
    });

    let chosen: Vec<(usize, Option<f64>)> = (0..cv.n_folds)
        .map(|o| {
            let mut best: Option<(usize, f64)> = None;
            for ((oo, g), s) in &cell_scores {
                let (true, Some(s)) = (*oo == o, *s) else { continue };
                let better = match best {
                    None => true,
                    Some((_, b)) => if classification { s > b } else { s < b },
                };
                if better {
                    best = Some((*g, s));
                }
            }
            best.map_or((0, None), |(g, s)| (g, Some(s)))
        })
        .collect();

    let outer_cells: Vec<(usize, usize)> = (0..cv.n_folds).map(|o| (o, chosen[o].0)).collect();
    let fitted: Vec<Result<(usize, Vec<f64>), ScreenError>> = map_cells(outer_cells, |o, g| {
        let (xt, yt) = rows(&train_of(o));
        let seed = derive_seed(cv.seed, &[o as u64, REFIT, g as u64]);
        let model = fit_model(&grid[g], &xt, &yt, classification, seed)?;
        let (xv, _) = rows(&outer[o]);
        Ok((o, model.predict(&xv)))
    });

    let mut oof = vec![f64::NAN; n];
    let mut folds = Vec::with_capacity(cv.n_folds);
    for r in fitted {
        let (o, pred) = r?;
        for (k, &i) in outer[o].iter().enumerate() {
            oof[i] = pred[k];
        }
        let truth: Vec<f64> = outer[o].iter().map(|&i| y[i]).collect();
        let metrics = if classification {
            let l: Vec<bool> = truth.iter().map(|&v| v > 0.5).collect();
            MetricSet::Classification(classification_metrics(&pred, &l))
        } else {
            MetricSet::Regression(regression_metrics(&truth, &pred))
        };
        folds.push(FoldResult {
            fold: o,
            spec: grid[chosen[o].0],
            inner_score: chosen[o].1,
            n_test: outer[o].len(),
            metrics,
        });
    }

    let mut votes = vec![0usize; grid.len()];
    for (g, _) in &chosen {
        votes[*g] += 1;
    }
    let top = votes.iter().copied().max().unwrap_or(0);
    let best_index = votes.iter().position(|&v| v == top).unwrap_or(0);
    let per_fold: Vec<MetricSet> = folds.iter().map(|f| f.metrics).collect();
    Ok(CvResult {
        target,
        best_spec: grid[best_index],
        metrics: MetricSet::mean(&per_fold).expect("at least two folds"),
        folds,
        oof_predictions: oof,
        truth: y,
    })
}
