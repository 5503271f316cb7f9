//! WebAssembly bindings for the browser demo. Each export has a plain Rust
//! counterpart so the logic can be tested natively.

use itemgauge_core::irt::{calibrate_concepts, flag_items, irf, CalibrationConfig, FlagThresholds};
use itemgauge_core::iwf::{detect, DetectorConfig};
use itemgauge_core::sim::{generate_bank, simulate_responses, CriterionVector, SimConfig};
use itemgauge_core::{Criterion, DetectionTier, Domain, ItemFlag, Mcq};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Evaluates the 2PL response function on `n` evenly spaced abilities in `[lo, hi]`.
pub fn irf_points(alpha: f64, delta: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![irf(lo, alpha, delta)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|k| irf(lo + step * k as f64, alpha, delta)).collect()
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct LintInput {
    pub stem: String,
    pub options: Vec<String>,
    pub correct_index: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LintFinding {
    pub criterion: String,
    pub flagged: bool,
    pub tier: DetectionTier,
    pub evidence: Option<String>,
}

pub fn lint(input: &LintInput) -> Result<Vec<LintFinding>, String> {
    if input.options.len() < 2 {
        return Err("an item needs at least two options".into());
    }
    if input.correct_index >= input.options.len() {
        return Err(format!("correct_index {} is out of range", input.correct_index));
    }
    let item = Mcq {
        item_id: "demo".into(),
        concept_id: "demo".into(),
        domain: Domain::Other,
        stem: input.stem.clone(),
        options: input.options.clone(),
        correct_index: input.correct_index,
    };
    let a = detect(&item, &DetectorConfig::default(), None);
    Ok(Criterion::ALL
        .iter()
        .map(|&c| LintFinding {
            criterion: c.name().to_string(),
            flagged: a.flag(c),
            tier: a.tiers[c.index()],
            evidence: a.evidence.get(&c).cloned(),
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Recovered {
    pub item_id: String,
    pub true_alpha: f64,
    pub true_delta: f64,
    pub alpha: f64,
    pub delta: f64,
    pub flags: Vec<ItemFlag>,
}

/// Simulates one concept with flaw-free items, fits it and pairs true with
/// estimated parameters.
pub fn simulate_fit(n_items: usize, n_students: usize, seed: u64) -> Result<Vec<Recovered>, String> {
    if !(2..=60).contains(&n_items) || !(50..=20_000).contains(&n_students) {
        return Err("use 2-60 items and 50-20000 students".into());
    }
    let config = SimConfig {
        n_concepts: 1,
        items_per_concept: n_items,
        students_per_concept: n_students,
        response_rate: 1.0,
        flaw_prevalence: CriterionVector::zeros(),
        effect_on_alpha: CriterionVector::zeros(),
        effect_on_delta: CriterionVector::zeros(),
        seed,
        ..SimConfig::default()
    };
    let bank = generate_bank(&config).map_err(|e| e.to_string())?;
    let matrices = simulate_responses(&bank.truth, &config);
    let cal = CalibrationConfig {
        min_students_per_concept: 1,
        min_responses_per_student: 1,
        min_responses_per_item: 1,
        ..CalibrationConfig::default()
    };
    let outcome = calibrate_concepts(&matrices, &cal).pop().ok_or("nothing to fit")?;
    let fit = outcome.fit.map_err(|e| e.to_string())?;
    let (params, _) = flag_items(fit.item_params, &FlagThresholds::default());
    Ok(bank
        .truth
        .items
        .iter()
        .filter_map(|t| {
            let p = params.iter().find(|p| p.item_id == t.item_id)?;
            Some(Recovered {
                item_id: t.item_id.clone(),
                true_alpha: t.alpha,
                true_delta: t.delta,
                alpha: p.alpha,
                delta: p.delta,
                flags: p.flags.iter().copied().collect(),
            })
        })
        .collect())
}

#[wasm_bindgen(js_name = irfCurve)]
pub fn irf_curve(alpha: f64, delta: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    irf_points(alpha, delta, lo, hi, n)
}

/// Takes `{stem, options, correct_index}` as JSON and returns one finding per criterion.
#[wasm_bindgen(js_name = lintItem)]
pub fn lint_item(json: &str) -> Result<String, JsError> {
    let input: LintInput = serde_json::from_str(json)?;
    let findings = lint(&input).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&findings)?)
}

#[wasm_bindgen(js_name = simulateAndFit)]
pub fn simulate_and_fit(n_items: usize, n_students: usize, seed: u64) -> Result<String, JsError> {
    let rows = simulate_fit(n_items, n_students, seed).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&rows)?)
}
