use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{chi2_sf, holm_bonferroni, t_crit_975, t_two_sided_p, StatsError};

/// Relative size below which a diagonal entry of R marks a dependent column.
const RANK_TOL: f64 = 1e-10;
/// Leverage this close to 1 makes an observation's HC3 weight undefined; it
/// contributes nothing to the sandwich.
const LEVERAGE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefEstimate {
    pub estimate: f64,
    pub robust_se: f64,
    pub t_stat: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub ci95: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: CoefEstimate,
    /// One entry per predictor column; `None` for all-zero columns, which are
    /// dropped before fitting.
    pub coefficients: Vec<Option<CoefEstimate>>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
    pub df_resid: usize,
}

impl RegressionFit {
    /// Indices of predictor columns that were fitted.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.coefficients.len()).filter(|&j| self.coefficients[j].is_some()).collect()
    }
}

/// Design with a leading intercept column and the non-zero predictor columns.
fn design(predictors: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let kept: Vec<usize> = (0..predictors.ncols())
        .filter(|&j| predictors.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let n = predictors.nrows();
    let x = DMatrix::from_fn(n, kept.len() + 1, |i, c| {
        if c == 0 { 1.0 } else { predictors[(i, kept[c - 1])] }
    });
    (x, kept)
}

fn check_finite(values: &[f64], what: &str) -> Result<(), StatsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::DegenerateInput(format!("non-finite value in {what}")));
    }
    Ok(())
}

fn r_squared(y: &DVector<f64>, fitted: &DVector<f64>) -> f64 {
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sse: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - sse / sst
}

/// R² of the minimum-norm least-squares fit of `y` on `x`.
fn lstsq_r2(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let svd = x.clone().svd(true, true);
    let eps = RANK_TOL * svd.singular_values.max();
    let beta = svd.solve(y, eps).expect("u and v were computed");
    r_squared(y, &(x * beta))
}

/// Least squares with HC3 heteroscedasticity-consistent standard errors.
///
/// `predictors` excludes the intercept, which is always added. Slope p-values
/// are Holm-adjusted across the fitted predictors; the intercept is not part
/// of that family.
pub fn ols_hc3(predictors: &DMatrix<f64>, response: &[f64]) -> Result<RegressionFit, StatsError> {
    let n = predictors.nrows();
    if response.len() != n {
        return Err(StatsError::InvalidArgument(format!(
            "response has {} rows, design has {n}",
            response.len()
        )));
    }
    check_finite(predictors.as_slice(), "design")?;
    check_finite(response, "response")?;
    let (x, kept) = design(predictors);
    let k = x.ncols();
    if n <= k + 1 {
        return Err(StatsError::InsufficientData { n, required: k + 1 });
    }

    let qr = x.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    if let Some(c) = diag.iter().position(|&d| d <= RANK_TOL * scale) {
        let what = if c == 0 { "intercept".to_string() } else { format!("predictor column {}", kept[c - 1]) };
        return Err(StatsError::RankDeficient(format!("{what} is a linear combination of earlier columns")));
    }
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| StatsError::RankDeficient("singular R factor".into()))?;

    let y = DVector::from_column_slice(response);
    let beta = &r_inv * (q.transpose() * &y);
    let fitted = &x * &beta;
    let resid = &y - &fitted;

    let mut weighted = x.clone();
    for i in 0..n {
        let h: f64 = q.row(i).iter().map(|v| v * v).sum();
        let w = if 1.0 - h < LEVERAGE_TOL { 0.0 } else { resid[i].abs() / (1.0 - h) };
        weighted.row_mut(i).scale_mut(w);
    }
    let meat = weighted.transpose() * &weighted;
    let bread = &r_inv * r_inv.transpose();
    let cov = &bread * meat * &bread;

    let df = n - k;
    let tcrit = t_crit_975(df as f64);
    let coef = |c: usize| {
        let est = beta[c];
        let se = cov[(c, c)].max(0.0).sqrt();
        let t = if se > 0.0 {
            est / se
        } else if est == 0.0 {
            0.0
        } else {
            est.signum() * f64::INFINITY
        };
        let p = if se > 0.0 || est != 0.0 { t_two_sided_p(t, df as f64) } else { 1.0 };
        CoefEstimate {
            estimate: est,
            robust_se: se,
            t_stat: t,
            p_raw: p,
            p_adjusted: p,
            ci95: [est - tcrit * se, est + tcrit * se],
        }
    };
    let mut slopes: Vec<CoefEstimate> = (1..k).map(coef).collect();
    let raw: Vec<f64> = slopes.iter().map(|c| c.p_raw).collect();
    let holm = holm_bonferroni(&raw, 0.05)?;
    for (c, p) in slopes.iter_mut().zip(holm.p_adjusted) {
        c.p_adjusted = p;
    }
    let mut coefficients = vec![None; predictors.ncols()];
    for (c, j) in slopes.into_iter().zip(&kept) {
        coefficients[*j] = Some(c);
    }

    Ok(RegressionFit {
        intercept: coef(0),
        coefficients,
        r_squared: r_squared(&y, &fitted),
        residuals: resid.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        n,
        df_resid: df,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "VifRepr", try_from = "VifRepr")]
pub enum VifValue {
    Finite(f64),
    /// The predictor is an exact linear combination of the others.
    Infinite,
}

impl VifValue {
    pub fn value(self) -> f64 {
        match self {
            VifValue::Finite(v) => v,
            VifValue::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum VifRepr {
    Num(f64),
    Text(String),
}

impl From<VifValue> for VifRepr {
    fn from(v: VifValue) -> Self {
        match v {
            VifValue::Finite(x) => VifRepr::Num(x),
            VifValue::Infinite => VifRepr::Text("inf".into()),
        }
    }
}

impl TryFrom<VifRepr> for VifValue {
    type Error = String;
    fn try_from(r: VifRepr) -> Result<Self, String> {
        match r {
            VifRepr::Num(x) => Ok(VifValue::Finite(x)),
            VifRepr::Text(s) if s == "inf" => Ok(VifValue::Infinite),
            VifRepr::Text(s) => Err(format!("invalid VIF value '{s}'")),
        }
    }
}

/// Variance inflation factor of every predictor column.
pub fn vif(predictors: &DMatrix<f64>) -> Result<Vec<VifValue>, StatsError> {
    check_finite(predictors.as_slice(), "design")?;
    let (n, p) = predictors.shape();
    if n < 2 {
        return Err(StatsError::InsufficientData { n, required: 1 });
    }
    Ok((0..p)
        .map(|j| {
            let y: DVector<f64> = predictors.column(j).into_owned();
            if y.iter().all(|&v| v == y[0]) {
                return VifValue::Infinite;
            }
            let x = DMatrix::from_fn(n, p, |i, c| match c {
                0 => 1.0,
                c if c <= j => predictors[(i, c - 1)],
                c => predictors[(i, c)],
            });
            let r2 = lstsq_r2(&x, &y).max(0.0);
            if 1.0 - r2 < 1e-12 {
                VifValue::Infinite
            } else {
                VifValue::Finite(1.0 / (1.0 - r2))
            }
        })
        .collect())
}

pub fn durbin_watson(residuals: &[f64]) -> Result<f64, StatsError> {
    if residuals.len() < 2 {
        return Err(StatsError::InsufficientData { n: residuals.len(), required: 1 });
    }
    check_finite(residuals, "residuals")?;
    let ss: f64 = residuals.iter().map(|e| e * e).sum();
    if ss == 0.0 {
        return Err(StatsError::DegenerateInput("all residuals are zero".into()));
    }
    let diff: f64 = residuals.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok(diff / ss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreuschPagan {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// Lagrange-multiplier test: n·R² of squared residuals on the design.
pub fn breusch_pagan(predictors: &DMatrix<f64>, residuals: &[f64]) -> Result<BreuschPagan, StatsError> {
    let n = predictors.nrows();
    if residuals.len() != n {
        return Err(StatsError::InvalidArgument(format!(
            "residuals have {} rows, design has {n}",
            residuals.len()
        )));
    }
    check_finite(residuals, "residuals")?;
    let (x, _) = design(predictors);
    let k = x.ncols();
    if n <= k + 1 {
        return Err(StatsError::InsufficientData { n, required: k + 1 });
    }
    let df = k - 1;
    let e2 = DVector::from_iterator(n, residuals.iter().map(|e| e * e));
    if e2.iter().all(|&v| v == e2[0]) {
        return Ok(BreuschPagan { statistic: 0.0, df, p: 1.0 });
    }
    let statistic = n as f64 * lstsq_r2(&x, &e2).max(0.0);
    Ok(BreuschPagan { statistic, df, p: chi2_sf(statistic, df as f64) })
}
