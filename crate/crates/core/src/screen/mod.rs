//! Models that predict item parameters, or problem-item flags, from the
//! 19-dimensional flaw vector alone.

mod cv;
mod ensemble;
mod linear;
mod metrics;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{sigmoid, FlagThresholds};
use crate::model::{AnalysisTuple, ItemFlag, N_CRITERIA};

pub use cv::{cv_evaluate, stratified_folds, CvConfig, CvResult, FoldResult};
pub use ensemble::{fit_forest, fit_gbt, Forest, ForestParams, Gbt, GbtParams};
pub use linear::{fit_logistic, fit_ridge, logistic_gradient, logistic_loss, LinearModel};
pub use metrics::{
    accuracy, auc, classification_metrics, f1, pearson_r, pr_curve, r_squared,
    regression_metrics, rmse, select_threshold, ClassificationMetrics, MetricSet,
    OperatingPoint, PrCurve, RegressionMetrics, DEFAULT_CUTOFF,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScreenError {
    #[error("insufficient data: {n} rows, need at least {required}")]
    InsufficientData { n: usize, required: usize },
    #[error("too few examples of each class: {positives} positive and {negatives} negative, need at least {required} of each")]
    InsufficientClass { positives: usize, negatives: usize, required: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("no threshold reaches precision {target}; best available is {best}")]
    PrecisionUnreachable { target: f64, best: f64 },
    #[error("logistic fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
}

/// What a screening model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Alpha,
    Delta,
    LowDisc,
    LowDiff,
    HighDiff,
}

impl Target {
    pub const ALL: [Target; 5] =
        [Target::Alpha, Target::Delta, Target::LowDisc, Target::LowDiff, Target::HighDiff];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Alpha => "alpha",
            Target::Delta => "delta",
            Target::LowDisc => "low-disc",
            Target::LowDiff => "low-diff",
            Target::HighDiff => "high-diff",
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Target::Alpha | Target::Delta)
    }

    fn flag(self) -> Option<ItemFlag> {
        match self {
            Target::LowDisc => Some(ItemFlag::LowDiscrimination),
            Target::LowDiff => Some(ItemFlag::LowDifficulty),
            Target::HighDiff => Some(ItemFlag::HighDifficulty),
            _ => None,
        }
    }

    /// Response value per item: the parameter itself, or 1/0 for a flag.
    pub fn values(self, data: &[AnalysisTuple], thresholds: &FlagThresholds) -> Vec<f64> {
        data.iter()
            .map(|t| match self {
                Target::Alpha => t.alpha,
                Target::Delta => t.delta,
                _ => {
                    let flags = thresholds.flags_for(t.alpha, t.delta);
                    f64::from(u8::from(flags.contains(&self.flag().expect("classification target"))))
                }
            })
            .collect()
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Target::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task '{s}' (expected alpha, delta, low-disc, low-diff or high-diff)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Training mean (regression) or training prevalence (classification).
    Baseline,
    RidgeLinear,
    LogisticL2,
    RandomForest,
    GradientBoosting,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Baseline => "baseline",
            ModelFamily::RidgeLinear => "ridge_linear",
            ModelFamily::LogisticL2 => "logistic_l2",
            ModelFamily::RandomForest => "random_forest",
            ModelFamily::GradientBoosting => "gradient_boosting",
        }
    }

    /// Families evaluated for a target, in report order.
    pub fn for_target(target: Target) -> [ModelFamily; 4] {
        let linear = if target.is_classification() {
            ModelFamily::LogisticL2
        } else {
            ModelFamily::RidgeLinear
        };
        [ModelFamily::Baseline, linear, ModelFamily::RandomForest, ModelFamily::GradientBoosting]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Baseline,
    RidgeLinear { penalty: f64 },
    LogisticL2 { penalty: f64 },
    RandomForest { n_estimators: usize, max_depth: Option<usize>, min_samples_split: usize },
    GradientBoosting { n_estimators: usize, learning_rate: f64, max_depth: usize },
}

impl ModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::Baseline => ModelFamily::Baseline,
            ModelSpec::RidgeLinear { .. } => ModelFamily::RidgeLinear,
            ModelSpec::LogisticL2 { .. } => ModelFamily::LogisticL2,
            ModelSpec::RandomForest { .. } => ModelFamily::RandomForest,
            ModelSpec::GradientBoosting { .. } => ModelFamily::GradientBoosting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridProfile {
    /// The full published grid.
    Paper,
    /// A few cells per family, for quick runs.
    Small,
}

impl FromStr for GridProfile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(GridProfile::Paper),
            "small" => Ok(GridProfile::Small),
            _ => Err(format!("unknown grid profile '{s}' (expected small or paper)")),
        }
    }
}

/// Hyperparameter grid of `family` under `profile`.
pub fn grid(family: ModelFamily, profile: GridProfile) -> Vec<ModelSpec> {
    let penalties: Vec<f64> = match profile {
        GridProfile::Paper => (-4..=4).map(|i| 10f64.powi(i)).collect(),
        GridProfile::Small => vec![0.01, 1.0, 100.0],
    };
    let (n_est, depths_rf, splits, rates, depths_gb): (&[usize], &[Option<usize>], &[usize], &[f64], &[usize]) =
        match profile {
            GridProfile::Paper => (
                &[50, 100, 200, 300],
                &[None, Some(5), Some(10), Some(20)],
                &[2, 5, 10],
                &[0.001, 0.01, 0.1, 0.2, 0.3],
                &[3, 5, 7, 10],
            ),
            GridProfile::Small => (&[100], &[None, Some(5)], &[2, 10], &[0.1], &[3, 5]),
        };
    match family {
        ModelFamily::Baseline => vec![ModelSpec::Baseline],
        ModelFamily::RidgeLinear => penalties.into_iter().map(|penalty| ModelSpec::RidgeLinear { penalty }).collect(),
        ModelFamily::LogisticL2 => penalties.into_iter().map(|penalty| ModelSpec::LogisticL2 { penalty }).collect(),
        ModelFamily::RandomForest => {
            let mut g = Vec::new();
            for &n_estimators in n_est {
                for &max_depth in depths_rf {
                    for &min_samples_split in splits {
                        g.push(ModelSpec::RandomForest { n_estimators, max_depth, min_samples_split });
                    }
                }
            }
            g
        }
        ModelFamily::GradientBoosting => {
            let mut g = Vec::new();
            for &n_estimators in n_est {
                for &learning_rate in rates {
                    for &max_depth in depths_gb {
                        g.push(ModelSpec::GradientBoosting { n_estimators, learning_rate, max_depth });
                    }
                }
            }
            g
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Constant(f64),
    Ridge(LinearModel),
    Logistic(LinearModel),
    Forest(Forest),
    Gbt(Gbt),
}

impl FittedModel {
    /// Predicted values, or positive-class probabilities for classifiers.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            FittedModel::Constant(c) => vec![*c; x.nrows()],
            FittedModel::Ridge(m) => m.decision(x),
            FittedModel::Logistic(m) => m.decision(x).into_iter().map(sigmoid).collect(),
            FittedModel::Forest(f) => f.predict(x),
            FittedModel::Gbt(g) => g.predict(x),
        }
    }
}

/// Fits `spec` to rows of `x`. For classification, `y` holds 1/0 labels.
pub fn fit_model(
    spec: &ModelSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    classification: bool,
    seed: u64,
) -> Result<FittedModel, ScreenError> {
    if x.nrows() == 0 {
        return Err(ScreenError::InsufficientData { n: 0, required: 1 });
    }
    Ok(match *spec {
        ModelSpec::Baseline => FittedModel::Constant(y.iter().sum::<f64>() / y.len() as f64),
        ModelSpec::RidgeLinear { penalty } => {
            if classification {
                return Err(ScreenError::InvalidSpec("ridge is a regression model".into()));
            }
            FittedModel::Ridge(fit_ridge(x, y, penalty)?)
        }
        ModelSpec::LogisticL2 { penalty } => {
            if !classification {
                return Err(ScreenError::InvalidSpec("logistic regression needs a flag target".into()));
            }
            let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
            FittedModel::Logistic(fit_logistic(x, &labels, penalty)?)
        }
        ModelSpec::RandomForest { n_estimators, max_depth, min_samples_split } => {
            FittedModel::Forest(fit_forest(
                x,
                y,
                ForestParams { n_estimators, max_depth, min_samples_split, classification },
                seed,
            ))
        }
        ModelSpec::GradientBoosting { n_estimators, learning_rate, max_depth } => {
            FittedModel::Gbt(fit_gbt(
                x,
                y,
                GbtParams { n_estimators, learning_rate, max_depth, classification },
                seed,
            ))
        }
    })
}

/// Flaw indicator matrix, one row per item.
pub fn design_matrix(data: &[AnalysisTuple]) -> DMatrix<f64> {
    DMatrix::from_fn(data.len(), N_CRITERIA, |i, j| data[i].features()[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_sizes() {
        assert_eq!(grid(ModelFamily::RidgeLinear, GridProfile::Paper).len(), 9);
        assert_eq!(grid(ModelFamily::RandomForest, GridProfile::Paper).len(), 48);
        assert_eq!(grid(ModelFamily::GradientBoosting, GridProfile::Paper).len(), 80);
        let ridge = grid(ModelFamily::RidgeLinear, GridProfile::Paper);
        assert_eq!(ridge[0], ModelSpec::RidgeLinear { penalty: 1e-4 });
        assert_eq!(ridge[8], ModelSpec::RidgeLinear { penalty: 1e4 });
    }

    #[test]
    fn spec_json_shape() {
        let s = ModelSpec::RandomForest { n_estimators: 50, max_depth: None, min_samples_split: 2 };
        let j = serde_json::to_value(s).unwrap();
        assert_eq!(j["family"], "random_forest");
        assert!(j["max_depth"].is_null());
        assert_eq!(serde_json::from_value::<ModelSpec>(j).unwrap(), s);
        assert_eq!("low-diff".parse::<Target>().unwrap(), Target::LowDiff);
    }
}
