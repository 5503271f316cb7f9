//! Per-concept 2PL calibration by marginal maximum likelihood (EM over a
//! fixed quadrature grid), eligibility filtering, and threshold flagging.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{IrtItemParams, ItemFlag, ResponseMatrix, StudentAbility};

/// Two-parameter logistic item response function.
#[inline]
pub fn irf(theta: f64, alpha: f64, delta: f64) -> f64 {
    sigmoid(alpha * (theta - delta))
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(z)) without overflow.
#[inline]
pub(crate) fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub min_students_per_concept: usize,
    pub min_responses_per_student: usize,
    pub min_responses_per_item: usize,
    pub quadrature_points: usize,
    pub quadrature_range: (f64, f64),
    pub alpha_bounds: (f64, f64),
    pub delta_bounds: (f64, f64),
    pub convergence_tol: f64,
    pub max_em_iterations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            min_students_per_concept: 500,
            min_responses_per_student: 5,
            min_responses_per_item: 500,
            quadrature_points: 61,
            quadrature_range: (-6.0, 6.0),
            alpha_bounds: (0.05, 5.0),
            delta_bounds: (-6.0, 6.0),
            convergence_tol: 1e-4,
            max_em_iterations: 500,
        }
    }
}

impl CalibrationConfig {
    /// Same fitting settings with every eligibility threshold at 1.
    pub fn without_thresholds(&self) -> Self {
        CalibrationConfig {
            min_students_per_concept: 1,
            min_responses_per_student: 1,
            min_responses_per_item: 1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: &str| Err(CalibrationError::InvalidConfig(m.to_string()));
        if self.min_students_per_concept == 0
            || self.min_responses_per_student == 0
            || self.min_responses_per_item == 0
            || self.max_em_iterations == 0
        {
            return bad("counts must be at least 1");
        }
        if self.quadrature_points < 2 {
            return bad("quadrature_points must be at least 2");
        }
        for (name, (lo, hi)) in [
            ("quadrature_range", self.quadrature_range),
            ("alpha_bounds", self.alpha_bounds),
            ("delta_bounds", self.delta_bounds),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(&format!("{name} must be a finite non-degenerate interval"));
            }
        }
        if self.alpha_bounds.0 <= 0.0 {
            return bad("alpha lower bound must be positive");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlagThresholds {
    pub disc_threshold: f64,
    pub low_diff_threshold: f64,
    pub high_diff_threshold: f64,
}

impl Default for FlagThresholds {
    fn default() -> Self {
        FlagThresholds {
            disc_threshold: 0.5,
            low_diff_threshold: -2.0,
            high_diff_threshold: 2.0,
        }
    }
}

impl FlagThresholds {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.low_diff_threshold < self.high_diff_threshold {
            Ok(())
        } else {
            Err(CalibrationError::InvalidConfig(
                "low_diff_threshold must be below high_diff_threshold".into(),
            ))
        }
    }

    pub fn flags_for(&self, alpha: f64, delta: f64) -> BTreeSet<ItemFlag> {
        let mut f = BTreeSet::new();
        if alpha < self.disc_threshold {
            f.insert(ItemFlag::LowDiscrimination);
        }
        if delta < self.low_diff_threshold {
            f.insert(ItemFlag::LowDifficulty);
        }
        if delta > self.high_diff_threshold {
            f.insert(ItemFlag::HighDifficulty);
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Student,
    Item,
    Response,
    Concept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    TooFewStudentResponses,
    TooFewItemResponses,
    DegenerateItem,
    DuplicateResponse,
    ConceptIneligible,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 5] = [
        ExclusionReason::TooFewStudentResponses,
        ExclusionReason::TooFewItemResponses,
        ExclusionReason::DegenerateItem,
        ExclusionReason::DuplicateResponse,
        ExclusionReason::ConceptIneligible,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::TooFewStudentResponses => "too_few_student_responses",
            ExclusionReason::TooFewItemResponses => "too_few_item_responses",
            ExclusionReason::DegenerateItem => "degenerate_item",
            ExclusionReason::DuplicateResponse => "duplicate_response",
            ExclusionReason::ConceptIneligible => "concept_ineligible",
        }
    }
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] =
        [EntityKind::Student, EntityKind::Item, EntityKind::Response, EntityKind::Concept];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Student => "student",
            EntityKind::Item => "item",
            EntityKind::Response => "response",
            EntityKind::Concept => "concept",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub concept_id: String,
    pub kind: EntityKind,
    pub entity_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub entries: Vec<Exclusion>,
}

impl ExclusionReport {
    pub fn push(&mut self, concept: &str, kind: EntityKind, id: &str, reason: ExclusionReason) {
        self.entries.push(Exclusion {
            concept_id: concept.to_string(),
            kind,
            entity_id: id.to_string(),
            reason,
        });
    }

    pub fn extend(&mut self, other: ExclusionReport) {
        self.entries.extend(other.entries);
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
    #[error("concept {concept_id} ineligible: {n_students} students after filtering, {required} required")]
    ConceptIneligible {
        concept_id: String,
        n_students: usize,
        required: usize,
        report: Box<ExclusionReport>,
    },
    #[error("concept {0} has no observed responses")]
    EmptyMatrix(String),
    #[error("concept {0} has no item with both correct and incorrect responses")]
    NoFittableItems(String),
}

/// Iteratively drops students and items below the response-count thresholds
/// until nothing changes, then checks the concept-level student count.
pub fn filter_eligible(
    matrix: &ResponseMatrix,
    config: &CalibrationConfig,
) -> Result<(ResponseMatrix, ExclusionReport), CalibrationError> {
    config.validate()?;
    let concept = matrix.concept_id.as_str();
    let mut keep_s = vec![true; matrix.n_students()];
    let mut keep_i = vec![true; matrix.n_items()];
    let mut report = ExclusionReport::default();

    loop {
        let mut s_count = vec![0usize; matrix.n_students()];
        let mut i_count = vec![0usize; matrix.n_items()];
        for (s, i, _) in matrix.entries() {
            if keep_s[s] && keep_i[i] {
                s_count[s] += 1;
                i_count[i] += 1;
            }
        }
        let mut changed = false;
        for (s, &c) in s_count.iter().enumerate() {
            if keep_s[s] && c < config.min_responses_per_student {
                keep_s[s] = false;
                changed = true;
                report.push(
                    concept,
                    EntityKind::Student,
                    &matrix.student_ids[s],
                    ExclusionReason::TooFewStudentResponses,
                );
            }
        }
        for (i, &c) in i_count.iter().enumerate() {
            if keep_i[i] && c < config.min_responses_per_item {
                keep_i[i] = false;
                changed = true;
                report.push(
                    concept,
                    EntityKind::Item,
                    &matrix.item_ids[i],
                    ExclusionReason::TooFewItemResponses,
                );
            }
        }
        if !changed {
            break;
        }
    }

    let n_students = keep_s.iter().filter(|&&k| k).count();
    if n_students < config.min_students_per_concept {
        report.push(concept, EntityKind::Concept, concept, ExclusionReason::ConceptIneligible);
        return Err(CalibrationError::ConceptIneligible {
            concept_id: concept.to_string(),
            n_students,
            required: config.min_students_per_concept,
            report: Box::new(report),
        });
    }
    Ok((matrix.retain(&keep_s, &keep_i), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptFit {
    pub concept_id: String,
    pub item_params: Vec<IrtItemParams>,
    pub abilities: Vec<StudentAbility>,
    pub log_likelihood: f64,
    /// Marginal log-likelihood evaluated at the parameters entering each EM
    /// iteration, followed by the value at the returned parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub n_iterations: usize,
    pub converged: bool,
    pub excluded: ExclusionReport,
}

/// Rectangular quadrature over the ability prior.
#[derive(Debug, Clone)]
struct Quadrature {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Quadrature {
    fn standard_normal(n: usize, (lo, hi): (f64, f64)) -> Self {
        let nodes: Vec<f64> = (0..n)
            .map(|q| lo + (hi - lo) * q as f64 / (n - 1) as f64)
            .collect();
        let dens: Vec<f64> = nodes.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let total: f64 = dens.iter().sum();
        let log_weights = dens.iter().map(|d| (d / total).ln()).collect();
        Quadrature { nodes, log_weights }
    }
}

/// Expected complete-data sufficient statistics for one item: expected number
/// of respondents (`n`) and of correct responses (`r`) at each node.
struct ItemCounts {
    n: Vec<f64>,
    r: Vec<f64>,
}

fn expected_loglik(counts: &ItemCounts, nodes: &[f64], alpha: f64, delta: f64) -> f64 {
    nodes
        .iter()
        .zip(counts.n.iter().zip(&counts.r))
        .map(|(&t, (&n, &r))| {
            let z = alpha * (t - delta);
            r * log_sigmoid(z) + (n - r) * log_sigmoid(-z)
        })
        .sum()
}

const M_STEP_MAX_ITER: usize = 25;

/// Maximizes the expected complete-data log-likelihood of one item by Fisher
/// scoring projected onto the parameter box. A step is accepted only if it
/// does not lower the objective, so each EM iteration is a generalized EM step.
fn m_step_item(
    counts: &ItemCounts,
    nodes: &[f64],
    start: (f64, f64),
    config: &CalibrationConfig,
) -> (f64, f64) {
    let (a_lo, a_hi) = config.alpha_bounds;
    let (d_lo, d_hi) = config.delta_bounds;
    let (mut alpha, mut delta) = start;
    let mut current = expected_loglik(counts, nodes, alpha, delta);

    for _ in 0..M_STEP_MAX_ITER {
        let (mut g_a, mut g_d) = (0.0, 0.0);
        let (mut i_aa, mut i_ad, mut i_dd) = (0.0, 0.0, 0.0);
        for (q, &t) in nodes.iter().enumerate() {
            let n = counts.n[q];
            if n == 0.0 {
                continue;
            }
            let d = t - delta;
            let p = sigmoid(alpha * d);
            let resid = counts.r[q] - n * p;
            let w = n * p * (1.0 - p);
            g_a += resid * d;
            g_d -= alpha * resid;
            i_aa += w * d * d;
            i_ad -= w * alpha * d;
            i_dd += w * alpha * alpha;
        }
        let ridge = 1e-10 * (i_aa + i_dd).max(1.0);
        let (i_aa, i_dd) = (i_aa + ridge, i_dd + ridge);
        let det = i_aa * i_dd - i_ad * i_ad;
        if !(det > 0.0) {
            break;
        }
        let step_a = (i_dd * g_a - i_ad * g_d) / det;
        let step_d = (i_aa * g_d - i_ad * g_a) / det;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let a = (alpha + scale * step_a).clamp(a_lo, a_hi);
            let dd = (delta + scale * step_d).clamp(d_lo, d_hi);
            let val = expected_loglik(counts, nodes, a, dd);
            if val >= current {
                accepted = Some((a, dd, val));
                break;
            }
            scale *= 0.5;
        }
        let Some((a, dd, val)) = accepted else { break };
        let moved = (a - alpha).abs().max((dd - delta).abs());
        alpha = a;
        delta = dd;
        current = val;
        if moved < 1e-10 {
            break;
        }
    }
    (alpha, delta)
}

struct EStep {
    log_likelihood: f64,
    counts: Vec<ItemCounts>,
    eap: Vec<f64>,
}

/// Posterior over quadrature nodes for every student. `item_slot` maps a
/// matrix item index to its position among fitted items (None = excluded).
fn e_step(
    matrix: &ResponseMatrix,
    student_ranges: &[(usize, usize)],
    entries: &[(usize, usize, bool)],
    item_slot: &[Option<usize>],
    params: &[(f64, f64)],
    quad: &Quadrature,
) -> EStep {
    let nq = quad.nodes.len();
    let mut log_p = vec![0.0; params.len() * nq];
    let mut log_q = vec![0.0; params.len() * nq];
    for (k, &(a, d)) in params.iter().enumerate() {
        for (q, &t) in quad.nodes.iter().enumerate() {
            let z = a * (t - d);
            log_p[k * nq + q] = log_sigmoid(z);
            log_q[k * nq + q] = log_sigmoid(-z);
        }
    }
    let mut counts: Vec<ItemCounts> = (0..params.len())
        .map(|_| ItemCounts { n: vec![0.0; nq], r: vec![0.0; nq] })
        .collect();
    let mut eap = vec![0.0; matrix.n_students()];
    let mut total = 0.0;
    let mut lp = vec![0.0; nq];

    for (s, &(start, end)) in student_ranges.iter().enumerate() {
        lp.copy_from_slice(&quad.log_weights);
        for &(_, i, x) in &entries[start..end] {
            let Some(k) = item_slot[i] else { continue };
            let row = if x { &log_p[k * nq..(k + 1) * nq] } else { &log_q[k * nq..(k + 1) * nq] };
            for (v, r) in lp.iter_mut().zip(row) {
                *v += r;
            }
        }
        let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in lp.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        total += max + sum.ln();
        let mut mean = 0.0;
        for (v, t) in lp.iter_mut().zip(&quad.nodes) {
            *v /= sum;
            mean += *v * t;
        }
        eap[s] = mean;
        for &(_, i, x) in &entries[start..end] {
            let Some(k) = item_slot[i] else { continue };
            let c = &mut counts[k];
            for (q, &w) in lp.iter().enumerate() {
                c.n[q] += w;
            }
            if x {
                for (q, &w) in lp.iter().enumerate() {
                    c.r[q] += w;
                }
            }
        }
    }
    EStep { log_likelihood: total, counts, eap }
}

/// Fits the 2PL model to one concept. Items whose observed outcomes are all
/// identical (or absent) are excluded and reported as degenerate.
pub fn fit_concept(
    matrix: &ResponseMatrix,
    config: &CalibrationConfig,
) -> Result<ConceptFit, CalibrationError> {
    config.validate()?;
    if matrix.is_empty() {
        return Err(CalibrationError::EmptyMatrix(matrix.concept_id.clone()));
    }
    let concept = matrix.concept_id.as_str();
    let entries: Vec<(usize, usize, bool)> = matrix.entries().collect();

    let mut n_obs = vec![0usize; matrix.n_items()];
    let mut n_correct = vec![0usize; matrix.n_items()];
    for &(_, i, x) in &entries {
        n_obs[i] += 1;
        n_correct[i] += x as usize;
    }
    let mut excluded = ExclusionReport::default();
    let mut item_slot = vec![None; matrix.n_items()];
    let mut fitted_items = Vec::new();
    for i in 0..matrix.n_items() {
        if n_correct[i] == 0 || n_correct[i] == n_obs[i] {
            excluded.push(
                concept,
                EntityKind::Item,
                &matrix.item_ids[i],
                ExclusionReason::DegenerateItem,
            );
        } else {
            item_slot[i] = Some(fitted_items.len());
            fitted_items.push(i);
        }
    }
    if fitted_items.is_empty() {
        return Err(CalibrationError::NoFittableItems(concept.to_string()));
    }

    let mut student_ranges = vec![(0, 0); matrix.n_students()];
    let mut k = 0;
    for (s, range) in student_ranges.iter_mut().enumerate() {
        let start = k;
        while k < entries.len() && entries[k].0 == s {
            k += 1;
        }
        *range = (start, k);
    }

    let quad = Quadrature::standard_normal(config.quadrature_points, config.quadrature_range);
    let (d_lo, d_hi) = config.delta_bounds;
    let (a_lo, a_hi) = config.alpha_bounds;
    let mut params: Vec<(f64, f64)> = fitted_items
        .iter()
        .map(|&i| {
            let p = n_correct[i] as f64 / n_obs[i] as f64;
            let delta = (-1.3 * (p / (1.0 - p)).ln()).clamp(d_lo, d_hi);
            (1.0f64.clamp(a_lo, a_hi), delta)
        })
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut n_iterations = 0;
    while n_iterations < config.max_em_iterations {
        n_iterations += 1;
        let e = e_step(matrix, &student_ranges, &entries, &item_slot, &params, &quad);
        trace.push(e.log_likelihood);
        let mut max_change = 0.0f64;
        for (k, p) in params.iter_mut().enumerate() {
            let next = m_step_item(&e.counts[k], &quad.nodes, *p, config);
            max_change = max_change.max((next.0 - p.0).abs()).max((next.1 - p.1).abs());
            *p = next;
        }
        if max_change < config.convergence_tol {
            converged = true;
            break;
        }
    }

    let last = e_step(matrix, &student_ranges, &entries, &item_slot, &params, &quad);
    trace.push(last.log_likelihood);

    let item_params = fitted_items
        .iter()
        .zip(&params)
        .map(|(&i, &(alpha, delta))| IrtItemParams {
            item_id: matrix.item_ids[i].clone(),
            concept_id: concept.to_string(),
            alpha,
            delta,
            n_responses: n_obs[i],
            flags: BTreeSet::new(),
        })
        .collect();
    let abilities = matrix
        .student_ids
        .iter()
        .zip(&last.eap)
        .map(|(id, &theta)| StudentAbility { student_id: id.clone(), theta })
        .collect();

    Ok(ConceptFit {
        concept_id: concept.to_string(),
        item_params,
        abilities,
        log_likelihood: last.log_likelihood,
        log_likelihood_trace: trace,
        n_iterations,
        converged,
        excluded,
    })
}

/// Result of filtering and fitting one concept.
#[derive(Debug, Clone)]
pub struct ConceptOutcome {
    pub concept_id: String,
    pub exclusions: ExclusionReport,
    pub fit: Result<ConceptFit, CalibrationError>,
}

fn calibrate_one(matrix: &ResponseMatrix, config: &CalibrationConfig) -> ConceptOutcome {
    let concept_id = matrix.concept_id.clone();
    match filter_eligible(matrix, config) {
        Ok((filtered, mut exclusions)) => {
            let fit = fit_concept(&filtered, config);
            if let Ok(f) = &fit {
                exclusions.extend(f.excluded.clone());
            }
            ConceptOutcome { concept_id, exclusions, fit }
        }
        Err(err) => {
            let exclusions = match &err {
                CalibrationError::ConceptIneligible { report, .. } => (**report).clone(),
                _ => ExclusionReport::default(),
            };
            ConceptOutcome { concept_id, exclusions, fit: Err(err) }
        }
    }
}

/// Filters and fits every concept. Concepts are independent; with the
/// `parallel` feature they run on the current rayon pool, and the output
/// order always follows the input order.
pub fn calibrate_concepts(
    matrices: &[ResponseMatrix],
    config: &CalibrationConfig,
) -> Vec<ConceptOutcome> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        matrices.par_iter().map(|m| calibrate_one(m, config)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        matrices.iter().map(|m| calibrate_one(m, config)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCounts {
    pub low_discrimination: usize,
    pub low_difficulty: usize,
    pub high_difficulty: usize,
}

impl fmt::Display for FlagCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "low_discrimination={} low_difficulty={} high_difficulty={}",
            self.low_discrimination, self.low_difficulty, self.high_difficulty
        )
    }
}

/// Sets each item's flags from strict threshold comparisons.
pub fn flag_items(
    mut params: Vec<IrtItemParams>,
    thresholds: &FlagThresholds,
) -> (Vec<IrtItemParams>, FlagCounts) {
    let mut counts = FlagCounts::default();
    for p in &mut params {
        p.flags = thresholds.flags_for(p.alpha, p.delta);
        counts.low_discrimination += p.flags.contains(&ItemFlag::LowDiscrimination) as usize;
        counts.low_difficulty += p.flags.contains(&ItemFlag::LowDifficulty) as usize;
        counts.high_difficulty += p.flags.contains(&ItemFlag::HighDifficulty) as usize;
    }
    (params, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|k| format!("{prefix}{k}")).collect()
    }

    #[test]
    fn irf_reference_values() {
        assert_eq!(irf(1.7, 0.9, 1.7), 0.5);
        // 1/(1+e^-1) and 1/(1+e^4), evaluated to 20 digits with mpmath
        assert!((irf(1.0, 1.0, 0.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((irf(-1.0, 2.0, 1.0) - 0.017_986_209_962_091_56).abs() < 1e-15);
    }

    #[test]
    fn irf_saturates_without_nan() {
        assert_eq!(irf(1e6, 5.0, 0.0), 1.0);
        assert_eq!(irf(-1e6, 5.0, 0.0), 0.0);
        assert!(log_sigmoid(-1e6).is_finite());
    }

    #[test]
    fn flags_are_strict() {
        let t = FlagThresholds::default();
        assert!(t.flags_for(0.4, 0.0).contains(&ItemFlag::LowDiscrimination));
        assert!(t.flags_for(1.0, -2.5).contains(&ItemFlag::LowDifficulty));
        assert!(t.flags_for(1.0, 2.5).contains(&ItemFlag::HighDifficulty));
        assert!(t.flags_for(1.2, 0.0).is_empty());
        assert!(t.flags_for(0.5, -2.0).is_empty());
        assert!(t.flags_for(0.5, 2.0).is_empty());
    }

    #[test]
    fn flag_items_counts() {
        let mk = |id: &str, alpha, delta| IrtItemParams {
            item_id: id.into(),
            concept_id: "c".into(),
            alpha,
            delta,
            n_responses: 1,
            flags: BTreeSet::new(),
        };
        let (p, c) = flag_items(
            vec![mk("a", 0.4, 0.0), mk("b", 1.0, -2.5), mk("c", 0.3, 2.5), mk("d", 1.2, 0.0)],
            &FlagThresholds::default(),
        );
        assert_eq!(c, FlagCounts { low_discrimination: 2, low_difficulty: 1, high_difficulty: 1 });
        assert!(p[3].flags.is_empty());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = CalibrationConfig::default();
        c.convergence_tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = CalibrationConfig::default();
        c.alpha_bounds = (1.0, 1.0);
        assert!(c.validate().is_err());
        let t = FlagThresholds { low_diff_threshold: 1.0, high_diff_threshold: 1.0, ..Default::default() };
        assert!(t.validate().is_err());
    }

    fn small_config(min: usize) -> CalibrationConfig {
        CalibrationConfig {
            min_students_per_concept: 1,
            min_responses_per_student: min,
            min_responses_per_item: 1,
            ..Default::default()
        }
    }

    #[test]
    fn filter_keeps_full_matrix() {
        let entries = (0..6).flat_map(|s| (0..4).map(move |i| (s, i, (s + i) % 2 == 0)));
        let m = ResponseMatrix::new("c", ids("s", 6), ids("i", 4), entries).unwrap();
        let (f, r) = filter_eligible(&m, &small_config(4)).unwrap();
        assert_eq!(f, m);
        assert!(r.is_empty());
    }

    #[test]
    fn filter_drops_sparse_student() {
        let mut entries: Vec<_> = (0..5).flat_map(|s| (0..6).map(move |i| (s, i, true))).collect();
        entries.extend([(5, 0, true), (5, 1, false)]);
        let m = ResponseMatrix::new("c", ids("s", 6), ids("i", 6), entries).unwrap();
        let (f, r) = filter_eligible(&m, &small_config(5)).unwrap();
        assert_eq!(f.n_students(), 5);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].entity_id, "s5");
        assert_eq!(r.entries[0].reason, ExclusionReason::TooFewStudentResponses);
    }

    /// Brute-force fixed point: repeatedly recount over the surviving
    /// submatrix until no entity falls below its threshold.
    fn brute_fixed_point(
        grid: &[[u8; 4]; 6],
        min_s: usize,
        min_i: usize,
    ) -> (Vec<usize>, Vec<usize>) {
        let mut s_alive: Vec<usize> = (0..6).collect();
        let mut i_alive: Vec<usize> = (0..4).collect();
        loop {
            let s_next: Vec<usize> = s_alive
                .iter()
                .copied()
                .filter(|&s| i_alive.iter().filter(|&&i| grid[s][i] != 2).count() >= min_s)
                .collect();
            let i_next: Vec<usize> = i_alive
                .iter()
                .copied()
                .filter(|&i| s_alive.iter().filter(|&&s| grid[s][i] != 2).count() >= min_i)
                .collect();
            if s_next == s_alive && i_next == i_alive {
                return (s_alive, i_alive);
            }
            s_alive = s_next;
            i_alive = i_next;
        }
    }

    #[test]
    fn filter_cascade_matches_brute_force() {
        // 2 = missing. Item 3 has only two responses; once it goes, student 5
        // (who answered items 0, 1, 3) falls below three responses.
        let grid: [[u8; 4]; 6] = [
            [1, 0, 1, 2],
            [0, 1, 1, 2],
            [1, 1, 0, 2],
            [0, 0, 1, 2],
            [1, 0, 1, 1],
            [1, 1, 2, 0],
        ];
        let entries: Vec<_> = (0..6)
            .flat_map(|s| (0..4).map(move |i| (s, i)))
            .filter(|&(s, i)| grid[s][i] != 2)
            .map(|(s, i)| (s, i, grid[s][i] == 1))
            .collect();
        let m = ResponseMatrix::new("c", ids("s", 6), ids("i", 4), entries).unwrap();
        let cfg = CalibrationConfig {
            min_students_per_concept: 1,
            min_responses_per_student: 3,
            min_responses_per_item: 3,
            ..Default::default()
        };
        let (f, r) = filter_eligible(&m, &cfg).unwrap();
        let (s_alive, i_alive) = brute_fixed_point(&grid, 3, 3);
        assert_eq!(s_alive, vec![0, 1, 2, 3, 4]);
        assert_eq!(i_alive, vec![0, 1, 2]);
        assert_eq!(f.student_ids, s_alive.iter().map(|s| format!("s{s}")).collect::<Vec<_>>());
        assert_eq!(f.item_ids, i_alive.iter().map(|i| format!("i{i}")).collect::<Vec<_>>());
        assert_eq!(r.count(EntityKind::Student), 1);
        assert_eq!(r.count(EntityKind::Item), 1);
    }

    #[test]
    fn concept_below_student_threshold_is_ineligible() {
        let entries = (0..3).flat_map(|s| (0..5).map(move |i| (s, i, i % 2 == 0)));
        let m = ResponseMatrix::new("c", ids("s", 3), ids("i", 5), entries).unwrap();
        let cfg = CalibrationConfig {
            min_students_per_concept: 4,
            min_responses_per_student: 1,
            min_responses_per_item: 1,
            ..Default::default()
        };
        match filter_eligible(&m, &cfg) {
            Err(CalibrationError::ConceptIneligible { n_students, required, report, .. }) => {
                assert_eq!((n_students, required), (3, 4));
                assert_eq!(report.count(EntityKind::Concept), 1);
            }
            other => panic!("expected ineligible, got {other:?}"),
        }
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let m = ResponseMatrix::new("c", ids("s", 2), ids("i", 2), []).unwrap();
        assert!(matches!(
            fit_concept(&m, &CalibrationConfig::default()),
            Err(CalibrationError::EmptyMatrix(_))
        ));
    }

    #[test]
    fn degenerate_items_are_excluded() {
        // item 0 always correct, items 1-2 informative
        let entries: Vec<_> = (0..40)
            .flat_map(|s| {
                [(s, 0, true), (s, 1, s % 3 == 0), (s, 2, s % 2 == 0)]
            })
            .collect();
        let m = ResponseMatrix::new("c", ids("s", 40), ids("i", 3), entries).unwrap();
        let fit = fit_concept(&m, &CalibrationConfig::default()).unwrap();
        assert_eq!(fit.item_params.len(), 2);
        assert_eq!(fit.excluded.entries[0].entity_id, "i0");
        assert_eq!(fit.excluded.entries[0].reason, ExclusionReason::DegenerateItem);
    }

    #[test]
    fn quadrature_weights_normalized() {
        let q = Quadrature::standard_normal(61, (-6.0, 6.0));
        let s: f64 = q.log_weights.iter().map(|w| w.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let mean: f64 = q.nodes.iter().zip(&q.log_weights).map(|(x, w)| x * w.exp()).sum();
        assert!(mean.abs() < 1e-12);
        assert_eq!(q.nodes[30], 0.0);
    }
}
