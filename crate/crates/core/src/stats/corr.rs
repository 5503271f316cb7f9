use serde::{Deserialize, Serialize};

use super::{t_two_sided_p, z_crit_975, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrMethod {
    Pearson,
    Spearman,
}

impl CorrMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrMethod::Pearson => "pearson",
            CorrMethod::Spearman => "spearman",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub method: CorrMethod,
    pub r: f64,
    /// Fisher-z 95% interval.
    pub ci95: [f64; 2],
    pub p_raw: f64,
    /// Equals `p_raw` until a family correction is applied.
    pub p_adjusted: f64,
    pub n: usize,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(StatsError::DegenerateInput(format!("need at least 3 pairs, got {}", x.len())));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::DegenerateInput("constant vector".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::DegenerateInput("non-finite value".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn correlate(method: CorrMethod, x: &[f64], y: &[f64]) -> CorrelationResult {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len();
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    let ci95 = if r.abs() == 1.0 {
        [r, r]
    } else if n <= 3 {
        [-1.0, 1.0]
    } else {
        let z = r.atanh();
        let half = z_crit_975() / ((n - 3) as f64).sqrt();
        [(z - half).tanh(), (z + half).tanh()]
    };
    CorrelationResult { method, r, ci95, p_raw: p, p_adjusted: p, n }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    check(x, y)?;
    Ok(correlate(CorrMethod::Pearson, x, y))
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    check(x, y)?;
    Ok(correlate(CorrMethod::Spearman, &midranks(x), &midranks(y)))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && v[order[end + 1]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = avg;
        }
        start = end + 1;
    }
    ranks
}
