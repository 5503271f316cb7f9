//! Item-writing-flaw annotation.
//!
//! Each of the 19 criteria has a deterministic offline operationalization.
//! Nine are plain rules (regex, lexicon, or ordering checks), four are
//! token-overlap heuristics, and six are judgment calls that an external
//! verifier may override when one is configured. The tier recorded on each
//! result says which path produced it.

mod rules;
pub mod text;
mod verifier;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Criterion, DetectionTier, IwfAnnotation, Mcq, N_CRITERIA};
use rules::ItemText;
pub use verifier::{
    parse_response, verify_external, Verifier, VerifierError, VerifierRequest, VerifierResponse,
};

static ABSOLUTE_TXT: &str = include_str!("../../lexicons/absolute_terms.txt");
static VAGUE_TXT: &str = include_str!("../../lexicons/vague_terms.txt");
static NEGATION_TXT: &str = include_str!("../../lexicons/negation_markers.txt");

#[derive(Debug, Error)]
pub enum DetectorConfigError {
    #[error("reading lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid detector config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicons {
    pub absolute_terms: Vec<String>,
    pub vague_terms: Vec<String>,
    pub negation_markers: Vec<String>,
}

fn lexicon_from(src: &str) -> Vec<String> {
    text::parse_lines(src).map(|l| l.to_lowercase()).collect()
}

impl Default for Lexicons {
    fn default() -> Self {
        Lexicons {
            absolute_terms: lexicon_from(ABSOLUTE_TXT),
            vague_terms: lexicon_from(VAGUE_TXT),
            negation_markers: lexicon_from(NEGATION_TXT),
        }
    }
}

impl Lexicons {
    /// Loads `absolute_terms.txt`, `vague_terms.txt` and `negation_markers.txt`
    /// from `dir`; any file that is absent keeps its built-in default.
    pub fn from_dir(dir: &Path) -> Result<Self, DetectorConfigError> {
        let mut lex = Lexicons::default();
        for (name, slot) in [
            ("absolute_terms.txt", &mut lex.absolute_terms),
            ("vague_terms.txt", &mut lex.vague_terms),
            ("negation_markers.txt", &mut lex.negation_markers),
        ] {
            let path = dir.join(name);
            if path.exists() {
                let src = fs::read_to_string(&path).map_err(|source| DetectorConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                *slot = lexicon_from(&src);
            }
        }
        Ok(lex)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierSettings {
    pub enabled: bool,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        VerifierSettings { enabled: false, endpoint: None, timeout_ms: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub lexicons: Lexicons,
    pub longest_option_ratio: f64,
    pub convergence_overlap_min: usize,
    pub verifier: VerifierSettings,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            lexicons: Lexicons::default(),
            longest_option_ratio: 1.5,
            convergence_overlap_min: 2,
            verifier: VerifierSettings::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorConfigError> {
        let bad = |m: &str| Err(DetectorConfigError::Invalid(m.to_string()));
        if !(self.longest_option_ratio > 1.0) {
            return bad("longest_option_ratio must exceed 1");
        }
        if self.convergence_overlap_min < 2 {
            return bad("convergence_overlap_min must be at least 2");
        }
        let l = &self.lexicons;
        if l.absolute_terms.is_empty() || l.vague_terms.is_empty() || l.negation_markers.is_empty() {
            return bad("lexicons must be non-empty");
        }
        Ok(())
    }
}

/// How a criterion is evaluated when no verifier overrides it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    Rule,
    Heuristic,
    Verifiable,
}

pub fn criterion_kind(c: Criterion) -> CriterionKind {
    use Criterion::*;
    match c {
        NoneOfTheAbove | LongestOptionCorrect | TrueFalseQuestion | AllOfTheAbove
        | FillInTheBlank | AbsoluteTerms | LostSequence | VagueTerms | NegativeWording => {
            CriterionKind::Rule
        }
        ImplausibleDistractors | LogicalCues | WordRepeats | GrammaticalCues => {
            CriterionKind::Heuristic
        }
        AmbiguousUnclear | GratuitousInformation | ConvergenceCues | UnfocusedStem
        | ComplexKType | MoreThanOneCorrect => CriterionKind::Verifiable,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriterionResult {
    pub criterion: Criterion,
    pub flagged: bool,
    pub evidence: String,
    pub tier: DetectionTier,
}

fn offline(c: Criterion, t: &ItemText, cfg: &DetectorConfig) -> Option<String> {
    use Criterion::*;
    match c {
        AmbiguousUnclear => rules::ambiguous_unclear(t),
        ImplausibleDistractors => rules::implausible_distractors(t),
        NoneOfTheAbove => rules::none_of_the_above(t),
        LongestOptionCorrect => rules::longest_option_correct(t, cfg),
        GratuitousInformation => rules::gratuitous_information(t),
        TrueFalseQuestion => rules::true_false_question(t),
        ConvergenceCues => rules::convergence_cues(t, cfg),
        LogicalCues => rules::logical_cues(t),
        AllOfTheAbove => rules::all_of_the_above(t),
        FillInTheBlank => rules::fill_in_the_blank(t),
        AbsoluteTerms => rules::absolute_terms(t, cfg),
        WordRepeats => rules::word_repeats(t),
        UnfocusedStem => rules::unfocused_stem(t),
        ComplexKType => rules::complex_k_type(t),
        GrammaticalCues => rules::grammatical_cues(t),
        LostSequence => rules::lost_sequence(t),
        VagueTerms => rules::vague_terms(t, cfg),
        MoreThanOneCorrect => rules::more_than_one_correct(t),
        NegativeWording => rules::negative_wording(t, cfg),
    }
}

/// Evaluates every criterion once on `item`.
pub fn detect_criteria(
    item: &Mcq,
    config: &DetectorConfig,
    verifier: Option<&dyn Verifier>,
) -> Vec<CriterionResult> {
    let t = ItemText::new(item);
    Criterion::ALL
        .into_iter()
        .map(|c| {
            let heuristic = || offline(c, &t, config);
            let (found, tier) = match criterion_kind(c) {
                CriterionKind::Rule => (heuristic(), DetectionTier::RuleBased),
                CriterionKind::Heuristic => (heuristic(), DetectionTier::Heuristic),
                CriterionKind::Verifiable if !config.verifier.enabled => {
                    (heuristic(), DetectionTier::Heuristic)
                }
                CriterionKind::Verifiable => {
                    match verifier.map(|v| verify_external(item, c, v)) {
                        Some(Ok((flagged, rationale))) => {
                            (flagged.then_some(rationale), DetectionTier::ExternalVerifier)
                        }
                        Some(Err(_)) | None => (heuristic(), DetectionTier::VerifierUnavailable),
                    }
                }
            };
            CriterionResult {
                criterion: c,
                flagged: found.is_some(),
                evidence: found.unwrap_or_default(),
                tier,
            }
        })
        .collect()
}

/// Annotates one item with the 19 flaw indicators.
pub fn detect(item: &Mcq, config: &DetectorConfig, verifier: Option<&dyn Verifier>) -> IwfAnnotation {
    let results = detect_criteria(item, config, verifier);
    let mut flags = [false; N_CRITERIA];
    let mut tiers = [DetectionTier::RuleBased; N_CRITERIA];
    let mut evidence = BTreeMap::new();
    for r in results {
        let k = r.criterion.index();
        flags[k] = r.flagged;
        tiers[k] = r.tier;
        if r.flagged {
            evidence.insert(r.criterion, r.evidence);
        }
    }
    IwfAnnotation {
        item_id: item.item_id.clone(),
        domain: item.domain,
        flags,
        evidence,
        tiers,
    }
}

/// Bank-level flaw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSummary {
    pub n_items: usize,
    pub total_flaws: usize,
    pub flaws_per_item: f64,
    pub flawless_share: f64,
    pub counts: BTreeMap<Criterion, usize>,
    pub prevalence: BTreeMap<Criterion, f64>,
    /// Five most prevalent criteria, ties broken by criterion order.
    pub most_common: Vec<(Criterion, f64)>,
}

pub fn summarize(annotations: &[IwfAnnotation]) -> BankSummary {
    let n = annotations.len();
    let mut counts: BTreeMap<Criterion, usize> =
        Criterion::ALL.iter().map(|&c| (c, 0)).collect();
    for a in annotations {
        for c in a.flagged() {
            *counts.get_mut(&c).expect("all criteria present") += 1;
        }
    }
    let total: usize = counts.values().sum();
    let ratio = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let prevalence: BTreeMap<Criterion, f64> =
        counts.iter().map(|(&c, &k)| (c, ratio(k))).collect();
    let mut ranked: Vec<(Criterion, f64)> = prevalence.iter().map(|(&c, &p)| (c, p)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(5);
    if n == 0 {
        ranked.clear();
    }
    BankSummary {
        n_items: n,
        total_flaws: total,
        flaws_per_item: ratio(total),
        flawless_share: ratio(annotations.iter().filter(|a| a.flag_count() == 0).count()),
        counts: if n == 0 { BTreeMap::new() } else { counts },
        prevalence: if n == 0 { BTreeMap::new() } else { prevalence },
        most_common: ranked,
    }
}

/// Annotates a bank and summarizes flaw prevalence. Output order follows input order.
pub fn detect_bank(
    items: &[Mcq],
    config: &DetectorConfig,
    verifier: Option<&dyn Verifier>,
) -> (Vec<IwfAnnotation>, BankSummary) {
    #[cfg(feature = "parallel")]
    let annotations: Vec<IwfAnnotation> = {
        use rayon::prelude::*;
        items.par_iter().map(|i| detect(i, config, verifier)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let annotations: Vec<IwfAnnotation> = items.iter().map(|i| detect(i, config, verifier)).collect();
    let summary = summarize(&annotations);
    (annotations, summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Domain;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn item(stem: &str, options: &[&str], correct: usize) -> Mcq {
        Mcq {
            item_id: "q1".into(),
            concept_id: "c".into(),
            domain: Domain::LifeEarth,
            stem: stem.into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            correct_index: correct,
        }
    }

    fn flagged(m: &Mcq) -> Vec<Criterion> {
        detect(m, &DetectorConfig::default(), None).flagged().collect()
    }

    #[test]
    fn all_of_the_above_flagged() {
        let m = item("Which are mammals?", &["Whales", "Bats", "Dogs", "All of the above"], 3);
        assert!(flagged(&m).contains(&Criterion::AllOfTheAbove));
    }

    #[test]
    fn lost_sequence_and_sorted() {
        let m = item("How many moons orbit the planet?", &["12", "3", "7", "9"], 0);
        assert!(flagged(&m).contains(&Criterion::LostSequence));
        let m = item("How many moons orbit the planet?", &["3", "7", "9", "12"], 3);
        assert!(!flagged(&m).contains(&Criterion::LostSequence));
    }

    #[test]
    fn negative_stem() {
        let m = item("Which of the following is NOT a mammal?", &["Whale", "Shark", "Bat", "Horse"], 1);
        assert!(flagged(&m).contains(&Criterion::NegativeWording));
    }

    #[test]
    fn evidence_present_for_every_flag() {
        let m = item(
            "This is a ____ question about the cell. Which is NOT true?",
            &["always true", "None of the above", "All of the above", "sometimes"],
            0,
        );
        let a = detect(&m, &DetectorConfig::default(), None);
        assert!(a.flag_count() >= 4);
        assert!(a.is_consistent());
    }

    #[test]
    fn verifier_disabled_never_called() {
        struct Counting(AtomicUsize);
        impl Verifier for Counting {
            fn verify(&self, _: &VerifierRequest) -> Result<VerifierResponse, VerifierError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(VerifierResponse { flagged: true, rationale: "x".into() })
            }
        }
        let v = Counting(AtomicUsize::new(0));
        let m = item("Which gas do plants absorb?", &["Oxygen", "Carbon dioxide", "Helium"], 1);
        let a = detect(&m, &DetectorConfig::default(), Some(&v));
        assert_eq!(v.0.load(Ordering::SeqCst), 0);
        assert!(a.tiers.iter().all(|t| *t != DetectionTier::ExternalVerifier));
        assert_eq!(a.tiers[Criterion::ComplexKType.index()], DetectionTier::Heuristic);
    }

    #[test]
    fn stub_verifier_pass_through_and_fallback() {
        struct Always;
        impl Verifier for Always {
            fn verify(&self, _: &VerifierRequest) -> Result<VerifierResponse, VerifierError> {
                Ok(VerifierResponse { flagged: true, rationale: String::new() })
            }
        }
        struct Down;
        impl Verifier for Down {
            fn verify(&self, _: &VerifierRequest) -> Result<VerifierResponse, VerifierError> {
                Err(VerifierError::Timeout)
            }
        }
        let mut cfg = DetectorConfig::default();
        cfg.verifier.enabled = true;
        let m = item("Which gas do plants absorb?", &["Oxygen", "Carbon dioxide", "Helium"], 1);

        let a = detect(&m, &cfg, Some(&Always));
        let c = Criterion::ComplexKType;
        assert!(a.flag(c));
        assert_eq!(a.tiers[c.index()], DetectionTier::ExternalVerifier);
        assert!(a.is_consistent());
        // rule-based criteria never consult the verifier
        assert!(!a.flag(Criterion::AllOfTheAbove));
        assert_eq!(a.tiers[Criterion::AllOfTheAbove.index()], DetectionTier::RuleBased);

        let b = detect(&m, &cfg, Some(&Down));
        assert!(!b.flag(c));
        assert_eq!(b.tiers[c.index()], DetectionTier::VerifierUnavailable);

        let none = detect(&m, &cfg, None);
        assert_eq!(none.tiers[c.index()], DetectionTier::VerifierUnavailable);
    }

    #[test]
    fn bank_summary_counts() {
        let a = item("Which are mammals?", &["Whales", "Bats", "All of the above"], 2);
        let mut b = item("Which gas do plants absorb?", &["Oxygen", "Carbon dioxide", "Helium"], 1);
        b.item_id = "q2".into();
        let (ann, s) = detect_bank(&[a, b], &DetectorConfig::default(), None);
        assert_eq!(ann.len(), 2);
        assert_eq!(s.prevalence[&Criterion::AllOfTheAbove], 0.5);
        assert_eq!(s.n_items, 2);

        let (_, empty) = detect_bank(&[], &DetectorConfig::default(), None);
        assert_eq!(empty.flaws_per_item, 0.0);
        assert!(empty.prevalence.is_empty());
    }

    #[test]
    fn config_validation() {
        let mut c = DetectorConfig::default();
        assert!(c.validate().is_ok());
        c.longest_option_ratio = 1.0;
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.lexicons.vague_terms.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn lexicon_dir_overrides() {
        let dir = std::env::temp_dir().join(format!("itemgauge-lex-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("vague_terms.txt"), "# custom\nmaybe\n").unwrap();
        let lex = Lexicons::from_dir(&dir).unwrap();
        assert_eq!(lex.vague_terms, ["maybe"]);
        assert_eq!(lex.absolute_terms, Lexicons::default().absolute_terms);
        fs::remove_dir_all(&dir).unwrap();
    }
}
