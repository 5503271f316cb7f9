//! Shared domain types for item banks, response data, calibrated parameters,
//! and flaw annotations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Subject area of an item. `Other` admits banks outside the three science/math domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    LifeEarth,
    Physical,
    Math,
    Other,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::LifeEarth, Domain::Physical, Domain::Math, Domain::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::LifeEarth => "life_earth",
            Domain::Physical => "physical",
            Domain::Math => "math",
            Domain::Other => "other",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain '{s}'"))
    }
}

/// The 19 item-writing-flaw criteria. Discriminants give the canonical column
/// index used by every 19-vector in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    AmbiguousUnclear = 0,
    ImplausibleDistractors,
    NoneOfTheAbove,
    LongestOptionCorrect,
    GratuitousInformation,
    TrueFalseQuestion,
    ConvergenceCues,
    LogicalCues,
    AllOfTheAbove,
    FillInTheBlank,
    AbsoluteTerms,
    WordRepeats,
    UnfocusedStem,
    ComplexKType,
    GrammaticalCues,
    LostSequence,
    VagueTerms,
    MoreThanOneCorrect,
    NegativeWording,
}

pub const N_CRITERIA: usize = 19;

impl Criterion {
    pub const ALL: [Criterion; N_CRITERIA] = [
        Criterion::AmbiguousUnclear,
        Criterion::ImplausibleDistractors,
        Criterion::NoneOfTheAbove,
        Criterion::LongestOptionCorrect,
        Criterion::GratuitousInformation,
        Criterion::TrueFalseQuestion,
        Criterion::ConvergenceCues,
        Criterion::LogicalCues,
        Criterion::AllOfTheAbove,
        Criterion::FillInTheBlank,
        Criterion::AbsoluteTerms,
        Criterion::WordRepeats,
        Criterion::UnfocusedStem,
        Criterion::ComplexKType,
        Criterion::GrammaticalCues,
        Criterion::LostSequence,
        Criterion::VagueTerms,
        Criterion::MoreThanOneCorrect,
        Criterion::NegativeWording,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Criterion> {
        Criterion::ALL.get(i).copied()
    }

    /// Stable machine name used in files and on the wire.
    pub fn name(self) -> &'static str {
        match self {
            Criterion::AmbiguousUnclear => "ambiguous_unclear",
            Criterion::ImplausibleDistractors => "implausible_distractors",
            Criterion::NoneOfTheAbove => "none_of_the_above",
            Criterion::LongestOptionCorrect => "longest_option_correct",
            Criterion::GratuitousInformation => "gratuitous_information",
            Criterion::TrueFalseQuestion => "true_false_question",
            Criterion::ConvergenceCues => "convergence_cues",
            Criterion::LogicalCues => "logical_cues",
            Criterion::AllOfTheAbove => "all_of_the_above",
            Criterion::FillInTheBlank => "fill_in_the_blank",
            Criterion::AbsoluteTerms => "absolute_terms",
            Criterion::WordRepeats => "word_repeats",
            Criterion::UnfocusedStem => "unfocused_stem",
            Criterion::ComplexKType => "complex_k_type",
            Criterion::GrammaticalCues => "grammatical_cues",
            Criterion::LostSequence => "lost_sequence",
            Criterion::VagueTerms => "vague_terms",
            Criterion::MoreThanOneCorrect => "more_than_one_correct",
            Criterion::NegativeWording => "negative_wording",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Criterion::AmbiguousUnclear => "Ambiguous/Unclear",
            Criterion::ImplausibleDistractors => "Implausible Distractors",
            Criterion::NoneOfTheAbove => "None of the Above",
            Criterion::LongestOptionCorrect => "Longest Option Correct",
            Criterion::GratuitousInformation => "Gratuitous Information",
            Criterion::TrueFalseQuestion => "True/False Question",
            Criterion::ConvergenceCues => "Convergence Cues",
            Criterion::LogicalCues => "Logical Cues",
            Criterion::AllOfTheAbove => "All of the Above",
            Criterion::FillInTheBlank => "Fill in the Blank",
            Criterion::AbsoluteTerms => "Absolute Terms",
            Criterion::WordRepeats => "Word Repeats",
            Criterion::UnfocusedStem => "Unfocused Stem",
            Criterion::ComplexKType => "Complex or K-type",
            Criterion::GrammaticalCues => "Grammatical Cues",
            Criterion::LostSequence => "Lost Sequence",
            Criterion::VagueTerms => "Vague Terms",
            Criterion::MoreThanOneCorrect => "More than One Correct",
            Criterion::NegativeWording => "Negative Wording",
        }
    }

    /// Rubric definition sent to an external verifier.
    pub fn definition(self) -> &'static str {
        match self {
            Criterion::AmbiguousUnclear => {
                "Stem and options must use precise wording that a student cannot misread."
            }
            Criterion::ImplausibleDistractors => {
                "Each incorrect option must be a believable answer for a student who lacks the knowledge."
            }
            Criterion::NoneOfTheAbove => {
                "No option may be a form of 'none of the above'; it rewards eliminating wrong answers rather than knowing the right one."
            }
            Criterion::LongestOptionCorrect => {
                "The correct option must not stand out by being clearly longer or more detailed than the incorrect ones."
            }
            Criterion::GratuitousInformation => {
                "The stem must not carry details that play no part in answering the question."
            }
            Criterion::TrueFalseQuestion => {
                "Options must not be a set of statements each to be judged true or false."
            }
            Criterion::ConvergenceCues => {
                "Options must not share words in a pattern that points to the correct option."
            }
            Criterion::LogicalCues => {
                "Stem and correct option must not contain a cue that lets a test-wise student deduce the answer."
            }
            Criterion::AllOfTheAbove => {
                "No option may be a form of 'all of the above'; recognizing a single true option then gives the answer away."
            }
            Criterion::FillInTheBlank => {
                "The stem must not omit words mid-sentence, which leaves the student with fragmentary context."
            }
            Criterion::AbsoluteTerms => {
                "Options must avoid extreme qualifiers such as 'always' or 'never', which students learn are usually wrong."
            }
            Criterion::WordRepeats => {
                "Words or phrases from the stem must not reappear in the correct option alone."
            }
            Criterion::UnfocusedStem => {
                "The stem must pose a clear, specific question answerable before reading the options."
            }
            Criterion::ComplexKType => {
                "Options must not ask the student to pick among combinations of other options."
            }
            Criterion::GrammaticalCues => {
                "Every option must agree grammatically with the stem and match the other options in form."
            }
            Criterion::LostSequence => {
                "Numeric or chronological options must be listed in order."
            }
            Criterion::VagueTerms => {
                "Options must avoid frequency words such as 'often' or 'sometimes' whose meaning is subjective."
            }
            Criterion::MoreThanOneCorrect => {
                "Exactly one option may be defensible as the best answer."
            }
            Criterion::NegativeWording => {
                "The stem must not be phrased negatively."
            }
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown criterion '{s}'"))
    }
}

/// One multiple-choice item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mcq {
    pub item_id: String,
    pub concept_id: String,
    pub domain: Domain,
    pub stem: String,
    pub options: Vec<String>,
    pub correct_index: usize,
}

impl Mcq {
    pub fn correct_option(&self) -> Option<&str> {
        self.options.get(self.correct_index).map(String::as_str)
    }

    /// Invariant violations for this item; empty when the item is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.options.len() < 2 {
            out.push(format!("needs at least 2 options, found {}", self.options.len()));
        }
        if self.correct_index >= self.options.len() {
            out.push(format!(
                "correct_index out of range ({} with {} options)",
                self.correct_index,
                self.options.len()
            ));
        }
        if self.stem.trim().is_empty() {
            out.push("empty stem".to_string());
        }
        for (i, opt) in self.options.iter().enumerate() {
            if opt.trim().is_empty() {
                out.push(format!("empty option at index {i}"));
            }
        }
        let mut seen = HashSet::new();
        if self.options.iter().any(|o| !seen.insert(o.as_str())) {
            out.push("duplicate options".to_string());
        }
        out
    }
}

/// One observed (student, item) outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub student_id: String,
    pub item_id: String,
    pub outcome: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatrixError {
    #[error("student index {0} out of bounds")]
    StudentOutOfBounds(usize),
    #[error("item index {0} out of bounds")]
    ItemOutOfBounds(usize),
    #[error("duplicate entry for (student {0}, item {1})")]
    DuplicateEntry(usize, usize),
}

/// Sparse binary student x item outcomes for a single concept.
///
/// Entries are kept sorted by (student, item), which fixes the summation
/// order of every likelihood computed from the matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub concept_id: String,
    pub student_ids: Vec<String>,
    pub item_ids: Vec<String>,
    entries: Vec<(u32, u32, bool)>,
}

impl ResponseMatrix {
    pub fn new(
        concept_id: impl Into<String>,
        student_ids: Vec<String>,
        item_ids: Vec<String>,
        entries: impl IntoIterator<Item = (usize, usize, bool)>,
    ) -> Result<Self, MatrixError> {
        let mut e: Vec<(u32, u32, bool)> = Vec::new();
        for (s, i, x) in entries {
            if s >= student_ids.len() {
                return Err(MatrixError::StudentOutOfBounds(s));
            }
            if i >= item_ids.len() {
                return Err(MatrixError::ItemOutOfBounds(i));
            }
            e.push((s as u32, i as u32, x));
        }
        e.sort_unstable_by_key(|&(s, i, _)| (s, i));
        if let Some(w) = e.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(MatrixError::DuplicateEntry(w[0].0 as usize, w[0].1 as usize));
        }
        Ok(ResponseMatrix {
            concept_id: concept_id.into(),
            student_ids,
            item_ids,
            entries: e,
        })
    }

    /// Builds a matrix from raw records, keeping the first outcome seen for
    /// each (student, item) pair. Returns the matrix and the number of later
    /// duplicates that were dropped.
    pub fn from_records<'a>(
        concept_id: impl Into<String>,
        records: impl IntoIterator<Item = &'a ResponseRecord>,
    ) -> (Self, usize) {
        let mut students: BTreeMap<&str, usize> = BTreeMap::new();
        let mut items: BTreeMap<&str, usize> = BTreeMap::new();
        let mut raw: Vec<(&str, &str, bool)> = Vec::new();
        for r in records {
            students.entry(r.student_id.as_str()).or_insert(0);
            items.entry(r.item_id.as_str()).or_insert(0);
            raw.push((r.student_id.as_str(), r.item_id.as_str(), r.outcome == 1));
        }
        for (k, v) in students.values_mut().enumerate() {
            *v = k;
        }
        for (k, v) in items.values_mut().enumerate() {
            *v = k;
        }
        let mut seen = HashSet::new();
        let mut dups = 0;
        let mut entries = Vec::with_capacity(raw.len());
        for (s, i, x) in raw {
            let key = (students[s], items[i]);
            if seen.insert(key) {
                entries.push((key.0, key.1, x));
            } else {
                dups += 1;
            }
        }
        let m = ResponseMatrix::new(
            concept_id,
            students.keys().map(|s| s.to_string()).collect(),
            items.keys().map(|s| s.to_string()).collect(),
            entries,
        )
        .expect("indices are constructed in bounds and deduplicated");
        (m, dups)
    }

    pub fn n_students(&self) -> usize {
        self.student_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_observed(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Observed entries as (student index, item index, outcome), sorted by student then item.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = (usize, usize, bool)> + '_ {
        self.entries.iter().map(|&(s, i, x)| (s as usize, i as usize, x))
    }

    pub fn get(&self, student: usize, item: usize) -> Option<bool> {
        self.entries
            .binary_search_by_key(&(student as u32, item as u32), |&(s, i, _)| (s, i))
            .ok()
            .map(|k| self.entries[k].2)
    }

    pub fn student_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_students()];
        for &(s, _, _) in &self.entries {
            c[s as usize] += 1;
        }
        c
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_items()];
        for &(_, i, _) in &self.entries {
            c[i as usize] += 1;
        }
        c
    }

    /// Keeps only the listed students and items (given as kept-flags),
    /// reindexing densely in original order.
    pub fn retain(&self, keep_students: &[bool], keep_items: &[bool]) -> ResponseMatrix {
        let remap = |keep: &[bool]| {
            let mut next = 0u32;
            keep.iter()
                .map(|&k| {
                    if k {
                        next += 1;
                        Some(next - 1)
                    } else {
                        None
                    }
                })
                .collect::<Vec<_>>()
        };
        let smap = remap(keep_students);
        let imap = remap(keep_items);
        let entries = self
            .entries
            .iter()
            .filter_map(|&(s, i, x)| Some((smap[s as usize]?, imap[i as usize]?, x)))
            .collect();
        ResponseMatrix {
            concept_id: self.concept_id.clone(),
            student_ids: pick(&self.student_ids, keep_students),
            item_ids: pick(&self.item_ids, keep_items),
            entries,
        }
    }
}

fn pick(ids: &[String], keep: &[bool]) -> Vec<String> {
    ids.iter().zip(keep).filter(|(_, &k)| k).map(|(s, _)| s.clone()).collect()
}

/// Threshold-based quality flag on a calibrated item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemFlag {
    LowDiscrimination,
    LowDifficulty,
    HighDifficulty,
}

impl ItemFlag {
    pub const ALL: [ItemFlag; 3] = [
        ItemFlag::LowDiscrimination,
        ItemFlag::LowDifficulty,
        ItemFlag::HighDifficulty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ItemFlag::LowDiscrimination => "low_discrimination",
            ItemFlag::LowDifficulty => "low_difficulty",
            ItemFlag::HighDifficulty => "high_difficulty",
        }
    }
}

impl FromStr for ItemFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ItemFlag::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown item flag '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtItemParams {
    pub item_id: String,
    pub concept_id: String,
    pub alpha: f64,
    pub delta: f64,
    pub n_responses: usize,
    pub flags: BTreeSet<ItemFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentAbility {
    pub student_id: String,
    pub theta: f64,
}

/// How a criterion result was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionTier {
    RuleBased,
    Heuristic,
    ExternalVerifier,
    VerifierUnavailable,
}

impl DetectionTier {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionTier::RuleBased => "rule_based",
            DetectionTier::Heuristic => "heuristic",
            DetectionTier::ExternalVerifier => "external_verifier",
            DetectionTier::VerifierUnavailable => "verifier_unavailable",
        }
    }
}

impl FromStr for DetectionTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            DetectionTier::RuleBased,
            DetectionTier::Heuristic,
            DetectionTier::ExternalVerifier,
            DetectionTier::VerifierUnavailable,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| format!("unknown tier '{s}'"))
    }
}

/// The 19 flaw indicators for one item, with evidence for every raised flag.
#[derive(Debug, Clone, PartialEq)]
pub struct IwfAnnotation {
    pub item_id: String,
    pub domain: Domain,
    pub flags: [bool; N_CRITERIA],
    pub evidence: BTreeMap<Criterion, String>,
    pub tiers: [DetectionTier; N_CRITERIA],
}

impl IwfAnnotation {
    pub fn flag(&self, c: Criterion) -> bool {
        self.flags[c.index()]
    }

    pub fn flag_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flagged(&self) -> impl Iterator<Item = Criterion> + '_ {
        Criterion::ALL.into_iter().filter(|c| self.flag(*c))
    }

    /// Checks that every raised flag has non-empty evidence.
    pub fn is_consistent(&self) -> bool {
        self.flagged()
            .all(|c| self.evidence.get(&c).is_some_and(|e| !e.trim().is_empty()))
    }
}

/// One row of the flaw/parameter analysis dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisTuple {
    pub item_id: String,
    pub domain: Domain,
    pub alpha: f64,
    pub delta: f64,
    pub flags: [bool; N_CRITERIA],
}

impl AnalysisTuple {
    pub fn flag_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn features(&self) -> [f64; N_CRITERIA] {
        self.flags.map(|f| if f { 1.0 } else { 0.0 })
    }
}

/// Invariant violations across a bank, keyed by item id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: BTreeMap<String, Vec<String>>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_bank(items: &[Mcq]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = HashSet::new();
    for item in items {
        let mut v = item.violations();
        if item.item_id.trim().is_empty() {
            v.push("empty item_id".to_string());
        }
        if !ids.insert(item.item_id.as_str()) {
            v.push("duplicate item_id".to_string());
        }
        if !v.is_empty() {
            report.errors.entry(item.item_id.clone()).or_default().extend(v);
        }
    }
    report
}

/// Inner join of calibrated parameters and flaw annotations on item id,
/// sorted by item id.
pub fn join_analysis_dataset(
    params: &[IrtItemParams],
    annotations: &[IwfAnnotation],
) -> Vec<AnalysisTuple> {
    let by_id: BTreeMap<&str, &IwfAnnotation> =
        annotations.iter().map(|a| (a.item_id.as_str(), a)).collect();
    let mut out: Vec<AnalysisTuple> = params
        .iter()
        .filter_map(|p| {
            let a = by_id.get(p.item_id.as_str())?;
            Some(AnalysisTuple {
                item_id: p.item_id.clone(),
                domain: a.domain,
                alpha: p.alpha,
                delta: p.delta,
                flags: a.flags,
            })
        })
        .collect();
    out.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    out
}
