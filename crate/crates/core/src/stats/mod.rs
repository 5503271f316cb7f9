//! Correlation, multiple-testing correction, robust regression, and the
//! regression diagnostics used to relate flaw annotations to item parameters.

mod analysis;
mod corr;
mod holm;
mod ols;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

pub use analysis::{
    rq1_analysis, rq2_analysis, Parameter, Rq1Report, Rq1Row, Rq2Fit, Rq2Report, Rq2Term,
    SkippedStratum, Stratum,
};
pub use corr::{midranks, pearson, spearman, CorrMethod, CorrelationResult};
pub use holm::{holm_bonferroni, HolmResult};
pub use ols::{
    breusch_pagan, durbin_watson, ols_hc3, vif, BreuschPagan, CoefEstimate, RegressionFit,
    VifValue,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("insufficient data: {n} rows, need more than {required}")]
    InsufficientData { n: usize, required: usize },
    #[error("design is rank deficient: {0}")]
    RankDeficient(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Upper 97.5% quantile of Student's t.
pub fn t_crit_975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Upper 97.5% quantile of the standard normal.
pub fn z_crit_975() -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975)
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive degrees of freedom").sf(x.max(0.0))
}
