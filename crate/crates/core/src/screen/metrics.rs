use serde::{Deserialize, Serialize};

use super::ScreenError;
use crate::stats::midranks;

/// Score at or above which a classifier's prediction counts as positive when
/// computing accuracy and F1.
pub const DEFAULT_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub r_squared: f64,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricSet {
    Regression(RegressionMetrics),
    Classification(ClassificationMetrics),
}

impl MetricSet {
    /// Component-wise mean of same-kind metric sets.
    pub fn mean(sets: &[MetricSet]) -> Option<MetricSet> {
        let n = sets.len() as f64;
        match sets.first()? {
            MetricSet::Regression(_) => {
                let mut acc = RegressionMetrics { rmse: 0.0, r_squared: 0.0, pearson_r: 0.0 };
                for s in sets {
                    let MetricSet::Regression(m) = s else { return None };
                    acc.rmse += m.rmse / n;
                    acc.r_squared += m.r_squared / n;
                    acc.pearson_r += m.pearson_r / n;
                }
                Some(MetricSet::Regression(acc))
            }
            MetricSet::Classification(_) => {
                let mut acc = ClassificationMetrics { accuracy: 0.0, auc: 0.0, f1: 0.0 };
                for s in sets {
                    let MetricSet::Classification(m) = s else { return None };
                    acc.accuracy += m.accuracy / n;
                    acc.auc += m.auc / n;
                    acc.f1 += m.f1 / n;
                }
                Some(MetricSet::Classification(acc))
            }
        }
    }
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> f64 {
    let sse: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    (sse / truth.len().max(1) as f64).sqrt()
}

/// 1 − SSE/SST; zero when the truth is constant.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len().max(1) as f64;
    let sst: f64 = truth.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return 0.0;
    }
    let sse: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - sse / sst
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson_r(truth: &[f64], pred: &[f64]) -> f64 {
    crate::stats::pearson(truth, pred).map(|c| c.r).unwrap_or(0.0)
}

pub fn regression_metrics(truth: &[f64], pred: &[f64]) -> RegressionMetrics {
    RegressionMetrics {
        rmse: rmse(truth, pred),
        r_squared: r_squared(truth, pred),
        pearson_r: pearson_r(truth, pred),
    }
}

/// Area under the ROC curve by the rank-sum formula; ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, ScreenError> {
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(ScreenError::SingleClass);
    }
    let ranks = midranks(scores);
    let r1: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n0 as f64))
}

pub fn accuracy(scores: &[f64], labels: &[bool], cutoff: f64) -> f64 {
    let hits = scores.iter().zip(labels).filter(|(&s, &l)| (s >= cutoff) == l).count();
    hits as f64 / labels.len().max(1) as f64
}

pub fn f1(scores: &[f64], labels: &[bool], cutoff: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= cutoff, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Classification metrics; AUC is 0.5 when the evaluation set has one class.
pub fn classification_metrics(scores: &[f64], labels: &[bool]) -> ClassificationMetrics {
    ClassificationMetrics {
        accuracy: accuracy(scores, labels, DEFAULT_CUTOFF),
        auc: auc(scores, labels).unwrap_or(0.5),
        f1: f1(scores, labels, DEFAULT_CUTOFF),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Distinct scores, descending; a score at or above the threshold is positive.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, ScreenError> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(ScreenError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = PrCurve { thresholds: vec![], precision: vec![], recall: vec![] };
    let (mut tp, mut taken) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            tp += labels[order[k]] as usize;
            taken += 1;
            k += 1;
        }
        curve.thresholds.push(t);
        curve.precision.push(tp as f64 / taken as f64);
        curve.recall.push(tp as f64 / positives as f64);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Lowest threshold whose precision reaches `target_precision`.
pub fn select_threshold(curve: &PrCurve, target_precision: f64) -> Result<OperatingPoint, ScreenError> {
    (0..curve.len())
        .rev()
        .find(|&k| curve.precision[k] >= target_precision)
        .map(|k| OperatingPoint {
            threshold: curve.thresholds[k],
            precision: curve.precision[k],
            recall: curve.recall[k],
        })
        .ok_or_else(|| ScreenError::PrecisionUnreachable {
            target: target_precision,
            best: curve.precision.iter().cloned().fold(0.0, f64::max),
        })
}
