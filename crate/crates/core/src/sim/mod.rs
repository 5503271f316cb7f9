//! Synthetic item banks with known parameters, flaw indicators, and
//! simulated responses.
//!
//! Every draw comes from a ChaCha stream keyed by (master seed, concept,
//! stream id), so concepts can be generated in any order or in parallel and
//! still produce identical output.

mod text;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, LogNormal, Normal, Uniform};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::irt::irf;
use crate::model::{Criterion, Domain, Mcq, ResponseMatrix, ResponseRecord, N_CRITERIA};

pub use text::{realize_item, TemplateSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// A value per flaw criterion, serialized as a map keyed by criterion name.
/// Missing keys read as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionVector(pub [f64; N_CRITERIA]);

impl CriterionVector {
    pub fn zeros() -> Self {
        CriterionVector([0.0; N_CRITERIA])
    }

    pub fn filled(v: f64) -> Self {
        CriterionVector([v; N_CRITERIA])
    }

    pub fn with(mut self, c: Criterion, v: f64) -> Self {
        self.0[c.index()] = v;
        self
    }

    pub fn get(&self, c: Criterion) -> f64 {
        self.0[c.index()]
    }
}

impl Serialize for CriterionVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(N_CRITERIA))?;
        for c in Criterion::ALL {
            m.serialize_entry(c.name(), &self.0[c.index()])?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for CriterionVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        let mut v = [0.0; N_CRITERIA];
        for (k, x) in raw {
            let c: Criterion = k.parse().map_err(serde::de::Error::custom)?;
            v[c.index()] = x;
        }
        Ok(CriterionVector(v))
    }
}

/// Parametric distribution for the base (flaw-free) item parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamDist {
    Normal { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
}

impl ParamDist {
    fn validate(&self, name: &str) -> Result<(), SimError> {
        let ok = match *self {
            ParamDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            ParamDist::LogNormal { mu, sigma } => {
                mu.is_finite() && sigma.is_finite() && sigma >= 0.0
            }
            ParamDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("{name}: invalid distribution parameters")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ParamDist::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            ParamDist::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated").sample(rng)
            }
            ParamDist::Uniform { low, high } => {
                Uniform::new(low, high).expect("validated").sample(rng)
            }
        }
    }
}

/// Joint effect added when both criteria are present on the same item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionTerm {
    pub first: Criterion,
    pub second: Criterion,
    #[serde(default)]
    pub on_delta: f64,
    #[serde(default)]
    pub on_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_concepts: usize,
    pub items_per_concept: usize,
    pub students_per_concept: usize,
    pub response_rate: f64,
    pub alpha_base: ParamDist,
    pub delta_base: ParamDist,
    pub alpha_floor: f64,
    pub flaw_prevalence: CriterionVector,
    pub effect_on_delta: CriterionVector,
    pub effect_on_alpha: CriterionVector,
    pub interaction_terms: Vec<InteractionTerm>,
    /// Relative frequency of each domain when assigning concepts.
    pub domain_weights: BTreeMap<Domain, f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        use Criterion::*;
        let prevalence = CriterionVector::filled(0.04)
            .with(AmbiguousUnclear, 0.30)
            .with(FillInTheBlank, 0.22)
            .with(MoreThanOneCorrect, 0.14)
            .with(NoneOfTheAbove, 0.12)
            .with(LostSequence, 0.10)
            .with(LongestOptionCorrect, 0.08)
            .with(AllOfTheAbove, 0.06)
            .with(ConvergenceCues, 0.06);
        let on_delta = CriterionVector::zeros()
            .with(MoreThanOneCorrect, -0.715)
            .with(LongestOptionCorrect, -0.437)
            .with(AllOfTheAbove, -0.364)
            .with(ConvergenceCues, 0.579);
        let on_alpha = CriterionVector::zeros()
            .with(MoreThanOneCorrect, -0.317)
            .with(LongestOptionCorrect, -0.216)
            .with(AllOfTheAbove, -0.101)
            .with(LostSequence, 0.314);
        SimConfig {
            n_concepts: 40,
            items_per_concept: 13,
            students_per_concept: 1800,
            response_rate: 0.85,
            alpha_base: ParamDist::LogNormal { mu: 0.0, sigma: 0.3 },
            delta_base: ParamDist::Normal { mean: 0.0, sd: 1.0 },
            alpha_floor: 0.05,
            flaw_prevalence: prevalence,
            effect_on_delta: on_delta,
            effect_on_alpha: on_alpha,
            interaction_terms: Vec::new(),
            domain_weights: BTreeMap::from([
                (Domain::LifeEarth, 0.55),
                (Domain::Physical, 0.32),
                (Domain::Math, 0.13),
            ]),
            seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.response_rate) {
            return bad(format!("response_rate {} outside [0, 1]", self.response_rate));
        }
        for c in Criterion::ALL {
            let p = self.flaw_prevalence.get(c);
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("prevalence for {c} outside [0, 1]"));
            }
            if !self.effect_on_delta.get(c).is_finite() || !self.effect_on_alpha.get(c).is_finite()
            {
                return bad(format!("non-finite effect for {c}"));
            }
        }
        for t in &self.interaction_terms {
            if !t.on_delta.is_finite() || !t.on_alpha.is_finite() {
                return bad("non-finite interaction effect".into());
            }
        }
        self.alpha_base.validate("alpha_base")?;
        self.delta_base.validate("delta_base")?;
        if !(self.alpha_floor > 0.0) {
            return bad("alpha_floor must be positive".into());
        }
        if self.domain_weights.values().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.domain_weights.values().sum::<f64>() <= 0.0
        {
            return bad("domain_weights must be non-negative with a positive total".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueItem {
    pub item_id: String,
    pub concept_id: String,
    pub domain: Domain,
    pub alpha: f64,
    pub delta: f64,
    pub flaws: [bool; N_CRITERIA],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueStudent {
    pub student_id: String,
    pub concept_id: String,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub items: Vec<TrueItem>,
    pub students: Vec<TrueStudent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimBank {
    pub items: Vec<Mcq>,
    pub truth: GroundTruth,
}

const STREAM_ITEMS: u64 = 1;
const STREAM_STUDENTS: u64 = 2;
const STREAM_RESPONSES: u64 = 3;
const STREAM_TEXT: u64 = 4;
const STREAM_DOMAIN: u64 = 5;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

fn stream(seed: u64, concept: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[concept as u64, stream]))
}

pub fn concept_id(k: usize) -> String {
    format!("c{k:04}")
}

fn pick_domain(weights: &BTreeMap<Domain, f64>, rng: &mut ChaCha8Rng) -> Domain {
    let total: f64 = weights.values().sum();
    let mut u = rng.random::<f64>() * total;
    for (&d, &w) in weights {
        if u < w {
            return d;
        }
        u -= w;
    }
    *weights.iter().rev().find(|(_, &w)| w > 0.0).map(|(d, _)| d).unwrap_or(&Domain::Other)
}

/// Draws item parameters, flaw indicators, templated item text, and student
/// abilities for every concept.
pub fn generate_bank(config: &SimConfig) -> Result<SimBank, SimError> {
    config.validate()?;
    let per_concept = |k: usize| generate_concept(config, k);
    #[cfg(feature = "parallel")]
    let parts: Vec<_> = {
        use rayon::prelude::*;
        (0..config.n_concepts).into_par_iter().map(per_concept).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = (0..config.n_concepts).map(per_concept).collect();

    let mut bank = SimBank {
        items: Vec::new(),
        truth: GroundTruth { items: Vec::new(), students: Vec::new() },
    };
    for (mcqs, items, students) in parts {
        bank.items.extend(mcqs);
        bank.truth.items.extend(items);
        bank.truth.students.extend(students);
    }
    Ok(bank)
}

fn generate_concept(config: &SimConfig, k: usize) -> (Vec<Mcq>, Vec<TrueItem>, Vec<TrueStudent>) {
    let cid = concept_id(k);
    let domain = pick_domain(&config.domain_weights, &mut stream(config.seed, k, STREAM_DOMAIN));
    let mut rng = stream(config.seed, k, STREAM_ITEMS);
    let mut text_rng = stream(config.seed, k, STREAM_TEXT);
    let mut mcqs = Vec::with_capacity(config.items_per_concept);
    let mut items = Vec::with_capacity(config.items_per_concept);
    for j in 0..config.items_per_concept {
        let mut flaws = [false; N_CRITERIA];
        for (f, x) in flaws.iter_mut().enumerate() {
            *x = rng.random::<f64>() < config.flaw_prevalence.0[f];
        }
        let base_alpha = config.alpha_base.sample(&mut rng);
        let base_delta = config.delta_base.sample(&mut rng);
        let mut alpha = base_alpha;
        let mut delta = base_delta;
        for f in 0..N_CRITERIA {
            if flaws[f] {
                alpha += config.effect_on_alpha.0[f];
                delta += config.effect_on_delta.0[f];
            }
        }
        for t in &config.interaction_terms {
            if flaws[t.first.index()] && flaws[t.second.index()] {
                alpha += t.on_alpha;
                delta += t.on_delta;
            }
        }
        let item_id = format!("{cid}-i{j:03}");
        let spec = TemplateSpec { flaws, unit: 1 + (k % 9) };
        let (stem, options, correct_index) = realize_item(&spec, &mut text_rng);
        mcqs.push(Mcq {
            item_id: item_id.clone(),
            concept_id: cid.clone(),
            domain,
            stem,
            options,
            correct_index,
        });
        items.push(TrueItem {
            item_id,
            concept_id: cid.clone(),
            domain,
            alpha: alpha.max(config.alpha_floor),
            delta,
            flaws,
        });
    }
    let mut srng = stream(config.seed, k, STREAM_STUDENTS);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let students = (0..config.students_per_concept)
        .map(|s| TrueStudent {
            student_id: format!("{cid}-s{s:05}"),
            concept_id: cid.clone(),
            theta: normal.sample(&mut srng),
        })
        .collect();
    (mcqs, items, students)
}

/// Simulated responses for one concept, as raw records in (student, item) order.
pub fn simulate_concept_records(
    truth: &GroundTruth,
    config: &SimConfig,
    concept_index: usize,
) -> Vec<ResponseRecord> {
    let cid = concept_id(concept_index);
    let items: Vec<&TrueItem> = truth.items.iter().filter(|i| i.concept_id == cid).collect();
    let mut rng = stream(config.seed, concept_index, STREAM_RESPONSES);
    let mut out = Vec::new();
    for s in truth.students.iter().filter(|s| s.concept_id == cid) {
        for it in &items {
            let keep = rng.random::<f64>() < config.response_rate;
            let u = rng.random::<f64>();
            if keep {
                out.push(ResponseRecord {
                    student_id: s.student_id.clone(),
                    item_id: it.item_id.clone(),
                    outcome: (u < irf(s.theta, it.alpha, it.delta)) as u8,
                });
            }
        }
    }
    out
}

/// Simulated response matrices, one per concept in concept order.
pub fn simulate_responses(truth: &GroundTruth, config: &SimConfig) -> Vec<ResponseMatrix> {
    let concepts = distinct_concepts(truth);
    let one = |(k, cid): (usize, &String)| {
        let recs = simulate_concept_records(truth, config, k);
        let students: Vec<String> = truth
            .students
            .iter()
            .filter(|s| &s.concept_id == cid)
            .map(|s| s.student_id.clone())
            .collect();
        let items: Vec<String> = truth
            .items
            .iter()
            .filter(|i| &i.concept_id == cid)
            .map(|i| i.item_id.clone())
            .collect();
        let s_idx: BTreeMap<&str, usize> =
            students.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let i_idx: BTreeMap<&str, usize> =
            items.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let entries: Vec<_> = recs
            .iter()
            .map(|r| (s_idx[r.student_id.as_str()], i_idx[r.item_id.as_str()], r.outcome == 1))
            .collect();
        ResponseMatrix::new(cid.clone(), students, items, entries).expect("simulated indices valid")
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        concepts.par_iter().enumerate().map(|(k, c)| one((k, c))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        concepts.iter().enumerate().map(one).collect()
    }
}

fn distinct_concepts(truth: &GroundTruth) -> Vec<String> {
    let mut v: Vec<String> = truth.items.iter().map(|i| i.concept_id.clone()).collect();
    v.dedup();
    v
}
