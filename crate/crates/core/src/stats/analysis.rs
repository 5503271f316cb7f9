use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    breusch_pagan, durbin_watson, holm_bonferroni, ols_hc3, pearson, spearman, vif, BreuschPagan,
    CoefEstimate, CorrMethod, CorrelationResult, StatsError, VifValue,
};
use crate::model::{AnalysisTuple, Criterion, Domain, N_CRITERIA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    /// Discrimination.
    Alpha,
    /// Difficulty.
    Delta,
}

impl Parameter {
    pub const ALL: [Parameter; 2] = [Parameter::Alpha, Parameter::Delta];

    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Alpha => "alpha",
            Parameter::Delta => "delta",
        }
    }

    pub fn of(self, t: &AnalysisTuple) -> f64 {
        match self {
            Parameter::Alpha => t.alpha,
            Parameter::Delta => t.delta,
        }
    }
}

/// Subset of items an analysis runs on. The pooled stratum includes every
/// item, including those outside the three named domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Stratum {
    Pooled,
    Domain(Domain),
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [
        Stratum::Pooled,
        Stratum::Domain(Domain::LifeEarth),
        Stratum::Domain(Domain::Physical),
        Stratum::Domain(Domain::Math),
    ];

    pub fn contains(self, t: &AnalysisTuple) -> bool {
        match self {
            Stratum::Pooled => true,
            Stratum::Domain(d) => t.domain == d,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stratum::Pooled => f.write_str("pooled"),
            Stratum::Domain(d) => f.write_str(d.as_str()),
        }
    }
}

impl FromStr for Stratum {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "pooled" {
            Ok(Stratum::Pooled)
        } else {
            s.parse::<Domain>().map(Stratum::Domain).map_err(|_| format!("unknown stratum '{s}'"))
        }
    }
}

impl From<Stratum> for String {
    fn from(s: Stratum) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Stratum {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStratum {
    pub parameter: Parameter,
    pub stratum: Stratum,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Row {
    /// Holm family the adjusted p-value belongs to.
    pub family: String,
    pub parameter: Parameter,
    pub stratum: Stratum,
    #[serde(flatten)]
    pub correlation: CorrelationResult,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub alpha: f64,
    pub rows: Vec<Rq1Row>,
    pub skipped: Vec<SkippedStratum>,
}

impl Rq1Report {
    pub fn find(&self, parameter: Parameter, stratum: Stratum, method: CorrMethod) -> Option<&Rq1Row> {
        self.rows.iter().find(|r| {
            r.parameter == parameter && r.stratum == stratum && r.correlation.method == method
        })
    }
}

fn check_alpha(alpha: f64) -> Result<(), StatsError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// Flaw count against each parameter, per stratum, with Pearson and Spearman.
/// Each parameter is one Holm family spanning all strata and both methods.
pub fn rq1_analysis(dataset: &[AnalysisTuple], alpha: f64) -> Result<Rq1Report, StatsError> {
    check_alpha(alpha)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for parameter in Parameter::ALL {
        let family = format!("rq1/{}", parameter.as_str());
        let mut block: Vec<Rq1Row> = Vec::new();
        for stratum in Stratum::ALL {
            let sub: Vec<&AnalysisTuple> = dataset.iter().filter(|t| stratum.contains(t)).collect();
            let x: Vec<f64> = sub.iter().map(|t| t.flag_count() as f64).collect();
            let y: Vec<f64> = sub.iter().map(|t| parameter.of(t)).collect();
            let results = if sub.len() < 3 {
                Err(StatsError::DegenerateInput(format!("{} items, need at least 3", sub.len())))
            } else {
                pearson(&x, &y).and_then(|p| Ok((p, spearman(&x, &y)?)))
            };
            match results {
                Ok((p, s)) => {
                    for correlation in [p, s] {
                        block.push(Rq1Row {
                            family: family.clone(),
                            parameter,
                            stratum,
                            correlation,
                            reject: false,
                        });
                    }
                }
                Err(e) => skipped.push(SkippedStratum {
                    parameter,
                    stratum,
                    n: sub.len(),
                    reason: e.to_string(),
                }),
            }
        }
        let raw: Vec<f64> = block.iter().map(|r| r.correlation.p_raw).collect();
        let holm = holm_bonferroni(&raw, alpha)?;
        for (k, row) in block.iter_mut().enumerate() {
            row.correlation.p_adjusted = holm.p_adjusted[k];
            row.reject = holm.reject[k];
        }
        rows.extend(block);
    }
    Ok(Rq1Report { alpha, rows, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Term {
    pub criterion: Criterion,
    /// `None` when no item in the stratum carries the flaw.
    pub coefficient: Option<CoefEstimate>,
    pub reject: bool,
    pub vif: Option<VifValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Fit {
    pub family: String,
    pub parameter: Parameter,
    pub stratum: Stratum,
    pub n: usize,
    pub intercept: CoefEstimate,
    pub terms: Vec<Rq2Term>,
    pub r_squared: f64,
    pub durbin_watson: Option<f64>,
    pub breusch_pagan: BreuschPagan,
}

impl Rq2Fit {
    pub fn term(&self, c: Criterion) -> &Rq2Term {
        &self.terms[c.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Report {
    pub alpha: f64,
    pub fits: Vec<Rq2Fit>,
    pub skipped: Vec<SkippedStratum>,
}

impl Rq2Report {
    pub fn find(&self, parameter: Parameter, stratum: Stratum) -> Option<&Rq2Fit> {
        self.fits.iter().find(|f| f.parameter == parameter && f.stratum == stratum)
    }
}

fn fit_stratum(
    sub: &[&AnalysisTuple],
    parameter: Parameter,
    stratum: Stratum,
    alpha: f64,
) -> Result<Rq2Fit, StatsError> {
    let required = N_CRITERIA + 2;
    if sub.len() <= required {
        return Err(StatsError::InsufficientData { n: sub.len(), required });
    }
    let x =DMatrix::from_fn(sub.len(), N_CRITERIA, |i, j| sub[i].features()[j]);
    let y: Vec<f64> = sub.iter().map(|t| parameter.of(t)).collect();
    let fit = ols_hc3(&x, &y)?;
    let kept = fit.kept();
    let vifs = vif(&x.select_columns(&kept))?;
    let raw: Vec<f64> = kept
        .iter()
        .map(|&j| fit.coefficients[j].as_ref().expect("kept column").p_raw)
        .collect();
    let holm = holm_bonferroni(&raw, alpha)?;
    let mut terms: Vec<Rq2Term> = Criterion::ALL
        .iter()
        .map(|&criterion| Rq2Term {
            criterion,
            coefficient: fit.coefficients[criterion.index()].clone(),
            reject: false,
            vif: None,
        })
        .collect();
    for (k, &j) in kept.iter().enumerate() {
        terms[j].reject = holm.reject[k];
        terms[j].vif = Some(vifs[k]);
    }
    Ok(Rq2Fit {
        family: format!("rq2/{}/{stratum}", parameter.as_str()),
        parameter,
        stratum,
        n: sub.len(),
        intercept: fit.intercept.clone(),
        terms,
        r_squared: fit.r_squared,
        durbin_watson: durbin_watson(&fit.residuals).ok(),
        breusch_pagan: breusch_pagan(&x, &fit.residuals)?,
    })
}

/// Regresses each parameter on the 19 flaw indicators, per stratum, with
/// Holm adjustment across the coefficients of each fit.
pub fn rq2_analysis(dataset: &[AnalysisTuple], alpha: f64) -> Result<Rq2Report, StatsError> {
    check_alpha(alpha)?;
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for parameter in [Parameter::Delta, Parameter::Alpha] {
        for stratum in Stratum::ALL {
            let sub: Vec<&AnalysisTuple> = dataset.iter().filter(|t| stratum.contains(t)).collect();
            match fit_stratum(&sub, parameter, stratum, alpha) {
                Ok(f) => fits.push(f),
                Err(e @ (StatsError::InsufficientData { .. }
                | StatsError::RankDeficient(_)
                | StatsError::DegenerateInput(_))) => skipped.push(SkippedStratum {
                    parameter,
                    stratum,
                    n: sub.len(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Rq2Report { alpha, fits, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(k: usize, domain: Domain, flags: [bool; N_CRITERIA], alpha: f64, delta: f64) -> AnalysisTuple {
        AnalysisTuple { item_id: format!("i{k:05}"), domain, flags, alpha, delta }
    }

    #[test]
    fn small_strata_skipped() {
        let mut f = [false; N_CRITERIA];
        let data: Vec<AnalysisTuple> = (0..8)
            .map(|k| {
                f[k % 3] = !f[k % 3];
                let d = if k < 2 { Domain::Math } else { Domain::Physical };
                tuple(k, d, f, 1.0 + k as f64 * 0.1, (k as f64).sin())
            })
            .collect();
        let r = rq1_analysis(&data, 0.05).unwrap();
        assert!(r.skipped.iter().any(|s| s.stratum == Stratum::Domain(Domain::Math) && s.n == 2));
        assert!(r.find(Parameter::Alpha, Stratum::Pooled, CorrMethod::Pearson).is_some());
        let rq2 = rq2_analysis(&data, 0.05).unwrap();
        assert!(rq2.fits.is_empty());
        assert_eq!(rq2.skipped.len(), 8);
    }

    #[test]
    fn stratum_round_trip() {
        for s in Stratum::ALL {
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Stratum>(&j).unwrap(), s);
        }
        assert_eq!(serde_json::to_string(&Stratum::Pooled).unwrap(), "\"pooled\"");
    }
}
