//! Offline operationalization of each criterion. Every function returns
//! `Some(evidence)` when the flaw is present.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

use super::text::{contains_run, content_words, normalize, sentences, strip_quoted, tokens};
use super::DetectorConfig;
use crate::model::Mcq;

/// Pre-tokenized view of one item.
pub(crate) struct ItemText<'a> {
    pub item: &'a Mcq,
    pub stem_tokens: Vec<String>,
    pub stem_content: Vec<String>,
    pub options_norm: Vec<String>,
    pub option_tokens: Vec<Vec<String>>,
    pub option_content: Vec<BTreeSet<String>>,
    pub correct: usize,
}

impl<'a> ItemText<'a> {
    pub fn new(item: &'a Mcq) -> Self {
        ItemText {
            item,
            stem_tokens: tokens(&item.stem),
            stem_content: content_words(&item.stem),
            options_norm: item.options.iter().map(|o| normalize(o)).collect(),
            option_tokens: item.options.iter().map(|o| tokens(o)).collect(),
            option_content: item
                .options
                .iter()
                .map(|o| content_words(o).into_iter().collect())
                .collect(),
            correct: item.correct_index,
        }
    }

    fn distractors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.options_norm.len()).filter(move |&i| i != self.correct)
    }

    fn char_len(&self, i: usize) -> usize {
        self.options_norm[i].chars().count()
    }
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static pattern"))
}

fn nota_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b(none of the above|not any of the above|none of these)\b")
}

fn aota_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b(all of the above|all of these)\b")
}

fn blank_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"_{3,}\s*[^_\s.?!]")
}

fn ktype_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    const TAG: &str = r"(?:[a-e]|[1-9]|i{1,3}|iv|vi{0,3})";
    re(
        &R,
        &format!(
            r"^(?:both\b.+\band\b.+|neither\b.+\bnor\b.+|(?:only\s+)?{TAG}(?:\s*,\s*{TAG})*\s*,?\s*(?:and|&)\s*{TAG}(?:\s+only)?)$"
        ),
    )
}

fn number_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"^([-+]?)\$?(\d[\d,]*(?:\.\d+)?|\.\d+)\s*(?:[a-zµ°%/²³]+\.?)?$")
}

fn date_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"^(\d{4})-(\d{1,2})-(\d{1,2})$")
}

const PRONOUN_OPENERS: &[&str] = &["it", "they", "this", "these", "those"];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "has", "have", "had", "does", "do", "did", "can",
    "could", "will", "would", "should", "shall", "may", "might", "must", "seems", "seem",
];
const INTERROGATIVES: &[&str] = &["what", "which", "who", "whom", "whose", "when", "where", "why", "how"];
const IMPERATIVES: &[&str] = &[
    "choose", "select", "identify", "name", "find", "calculate", "determine", "complete",
    "compute", "solve", "estimate", "explain", "describe", "list", "give", "state", "pick",
    "classify", "evaluate", "simplify",
];

pub(crate) fn ambiguous_unclear(t: &ItemText) -> Option<String> {
    if t.stem_tokens.len() > 60 {
        return Some(format!("stem has {} tokens (more than 60)", t.stem_tokens.len()));
    }
    match t.stem_tokens.as_slice() {
        [first, second, ..]
            if PRONOUN_OPENERS.contains(&first.as_str())
                && AUXILIARIES.contains(&second.as_str()) =>
        {
            Some(format!("stem opens with '{first} {second}' with no antecedent noun"))
        }
        _ => None,
    }
}

pub(crate) fn implausible_distractors(t: &ItemText) -> Option<String> {
    let mut lens: Vec<usize> = (0..t.options_norm.len()).map(|i| t.char_len(i)).collect();
    lens.sort_unstable();
    let n = lens.len();
    let median = if n % 2 == 1 {
        lens[n / 2] as f64
    } else {
        (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
    };
    let stem: BTreeSet<&String> = t.stem_content.iter().collect();
    t.distractors()
        .find(|&d| {
            t.option_content[d].iter().all(|w| !stem.contains(w))
                && (t.char_len(d) as f64) < 0.4 * median
        })
        .map(|d| {
            format!(
                "distractor '{}' shares no content words with the stem and is shorter than 40% of the median option length",
                t.item.options[d]
            )
        })
}

pub(crate) fn none_of_the_above(t: &ItemText) -> Option<String> {
    t.options_norm
        .iter()
        .zip(&t.item.options)
        .find(|(n, _)| nota_re().is_match(n))
        .map(|(_, raw)| format!("option '{raw}' is a none-of-the-above variant"))
}

pub(crate) fn all_of_the_above(t: &ItemText) -> Option<String> {
    t.options_norm
        .iter()
        .zip(&t.item.options)
        .find(|(n, _)| aota_re().is_match(n))
        .map(|(_, raw)| format!("option '{raw}' is an all-of-the-above variant"))
}

pub(crate) fn longest_option_correct(t: &ItemText, cfg: &DetectorConfig) -> Option<String> {
    let longest = t.distractors().map(|d| t.char_len(d)).max()?;
    let correct = t.char_len(t.correct);
    (longest > 0 && correct as f64 >= cfg.longest_option_ratio * longest as f64).then(|| {
        format!(
            "correct option has {correct} characters, at least {} x the longest distractor ({longest})",
            cfg.longest_option_ratio
        )
    })
}

pub(crate) fn gratuitous_information(t: &ItemText) -> Option<String> {
    let sents = sentences(&t.item.stem);
    if sents.len() < 3 {
        return None;
    }
    let first: BTreeSet<String> = content_words(&sents[0]).into_iter().collect();
    let shared = t.option_content.iter().any(|o| o.iter().any(|w| first.contains(w)));
    (!shared).then(|| {
        format!(
            "stem has {} sentences and the first ('{}') shares no content words with any option",
            sents.len(),
            sents[0]
        )
    })
}

pub(crate) fn true_false_question(t: &ItemText) -> Option<String> {
    let tf = t
        .option_tokens
        .iter()
        .zip(&t.options_norm)
        .filter(|(toks, norm)| {
            matches!(toks.first().map(String::as_str), Some("true" | "false"))
                || matches!(norm.as_str(), "t" | "f")
        })
        .count();
    let n = t.options_norm.len();
    (2 * tf >= n).then(|| format!("{tf} of {n} options are true/false statements"))
}

pub(crate) fn convergence_cues(t: &ItemText, cfg: &DetectorConfig) -> Option<String> {
    // Options identical after normalization count once.
    let mut seen = BTreeSet::new();
    let distinct: Vec<usize> = (0..t.options_norm.len())
        .filter(|&i| seen.insert(t.options_norm[i].clone()))
        .collect();
    let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
    for &i in &distinct {
        for w in &t.option_content[i] {
            *counts.entry(w).or_default() += 1;
        }
    }
    let correct_words = &t.option_content[t.correct];
    let (best_word, best) = correct_words
        .iter()
        .map(|w| (w, counts.get(w).copied().unwrap_or(0)))
        .max_by_key(|&(_, c)| c)?;
    let other_best = counts
        .iter()
        .filter(|(w, _)| !correct_words.contains(**w))
        .map(|(_, &c)| c)
        .max()
        .unwrap_or(0);
    (best >= cfg.convergence_overlap_min && best > other_best).then(|| {
        format!("'{best_word}' appears in {best} options including the correct one; no distractor-only word recurs as often")
    })
}

fn content_bigrams(words: &[String]) -> BTreeSet<(String, String)> {
    words.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
}

pub(crate) fn logical_cues(t: &ItemText) -> Option<String> {
    let stem = content_bigrams(&t.stem_content);
    let seq = |i: usize| content_words(&t.item.options[i]);
    let correct = content_bigrams(&seq(t.correct));
    let distractor_bigrams: BTreeSet<(String, String)> =
        t.distractors().flat_map(|d| content_bigrams(&seq(d))).collect();
    correct
        .iter()
        .find(|b| stem.contains(*b) && !distractor_bigrams.contains(*b))
        .map(|(a, b)| format!("phrase '{a} {b}' from the stem reappears only in the correct option"))
}

pub(crate) fn word_repeats(t: &ItemText) -> Option<String> {
    t.stem_content
        .iter()
        .find(|w| {
            t.option_content[t.correct].contains(*w)
                && t.distractors().all(|d| !t.option_content[d].contains(*w))
        })
        .map(|w| format!("stem word '{w}' appears in the correct option and in no distractor"))
}

pub(crate) fn absolute_terms(t: &ItemText, cfg: &DetectorConfig) -> Option<String> {
    lexicon_hit(t, &cfg.lexicons.absolute_terms, true)
        .map(|(term, opt)| format!("option '{opt}' uses absolute term '{term}'"))
}

pub(crate) fn vague_terms(t: &ItemText, cfg: &DetectorConfig) -> Option<String> {
    lexicon_hit(t, &cfg.lexicons.vague_terms, false)
        .map(|(term, opt)| format!("option '{opt}' uses vague term '{term}'"))
}

/// First (term, option) pair where a lexicon phrase occurs as whole words in
/// an option. Options that are none/all-of-the-above variants are skipped
/// when `skip_catchalls` is set.
fn lexicon_hit<'t>(
    t: &'t ItemText,
    lexicon: &[String],
    skip_catchalls: bool,
) -> Option<(String, &'t str)> {
    for (i, toks) in t.option_tokens.iter().enumerate() {
        let norm = &t.options_norm[i];
        if skip_catchalls && (nota_re().is_match(norm) || aota_re().is_match(norm)) {
            continue;
        }
        for term in lexicon {
            if contains_run(toks, &tokens(term)) {
                return Some((term.clone(), t.item.options[i].as_str()));
            }
        }
    }
    None
}

pub(crate) fn fill_in_the_blank(t: &ItemText) -> Option<String> {
    blank_re()
        .is_match(&t.item.stem)
        .then(|| "stem has a blank inside the sentence".to_string())
}

pub(crate) fn unfocused_stem(t: &ItemText) -> Option<String> {
    if t.item.stem.contains('?') {
        return None;
    }
    let has_cue = t.stem_tokens.iter().any(|w| {
        INTERROGATIVES.contains(&w.as_str())
            || AUXILIARIES.contains(&w.as_str())
            || IMPERATIVES.contains(&w.as_str())
    });
    (!has_cue).then(|| "stem has no question word, question mark, or verb".to_string())
}

pub(crate) fn complex_k_type(t: &ItemText) -> Option<String> {
    t.options_norm
        .iter()
        .zip(&t.item.options)
        .find(|(n, _)| ktype_re().is_match(n.trim_end_matches('.')))
        .map(|(_, raw)| format!("option '{raw}' combines other options"))
}

fn starts_with_vowel(s: &str) -> Option<bool> {
    let c = s.chars().next()?;
    c.is_alphabetic().then(|| "aeiou".contains(c))
}

fn looks_plural(word: &str) -> bool {
    word.ends_with('s') && !["ss", "us", "is"].iter().any(|e| word.ends_with(e))
}

pub(crate) fn grammatical_cues(t: &ItemText) -> Option<String> {
    let last = t.stem_tokens.last()?.as_str();
    let n = t.options_norm.len();
    match last {
        "a" | "an" => {
            let want_vowel = last == "an";
            let agree: Vec<usize> = (0..n)
                .filter(|&i| starts_with_vowel(&t.options_norm[i]) == Some(want_vowel))
                .collect();
            (agree.len() == 1).then(|| {
                format!(
                    "stem ends with '{last}' and only option '{}' agrees with it",
                    t.item.options[agree[0]]
                )
            })
        }
        "is" | "was" | "are" | "were" => {
            let want_plural = matches!(last, "are" | "were");
            let agree: Vec<usize> = (0..n)
                .filter(|&i| {
                    t.option_tokens[i].last().is_some_and(|w| looks_plural(w) == want_plural)
                })
                .collect();
            (agree == [t.correct]).then(|| {
                format!("stem ends with '{last}' and only the correct option agrees in number")
            })
        }
        _ => None,
    }
}

fn parse_ordinal(s: &str) -> Option<f64> {
    if let Some(c) = date_re().captures(s) {
        let y: f64 = c[1].parse().ok()?;
        let m: f64 = c[2].parse().ok()?;
        let d: f64 = c[3].parse().ok()?;
        return Some(y * 10_000.0 + m * 100.0 + d);
    }
    let c = number_re().captures(s)?;
    let v: f64 = c[2].replace(',', "").parse().ok()?;
    Some(if &c[1] == "-" { -v } else { v })
}

pub(crate) fn lost_sequence(t: &ItemText) -> Option<String> {
    let values: Vec<f64> = t
        .options_norm
        .iter()
        .map(|o| parse_ordinal(o))
        .collect::<Option<Vec<_>>>()?;
    let asc = values.windows(2).all(|w| w[0] <= w[1]);
    let desc = values.windows(2).all(|w| w[0] >= w[1]);
    (!asc && !desc).then(|| {
        format!("numeric options are out of order: {}", t.item.options.join(", "))
    })
}

pub(crate) fn more_than_one_correct(t: &ItemText) -> Option<String> {
    let n = t.options_norm.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if i < j && t.options_norm[i] == t.options_norm[j] {
                return Some(format!(
                    "options '{}' and '{}' are identical after normalization",
                    t.item.options[i], t.item.options[j]
                ));
            }
            let (short, long) = (&t.option_tokens[i], &t.option_tokens[j]);
            if short.len() < long.len()
                && !t.option_content[i].is_empty()
                && contains_run(long, short)
            {
                return Some(format!(
                    "option '{}' is repeated inside option '{}'",
                    t.item.options[i], t.item.options[j]
                ));
            }
        }
    }
    None
}

pub(crate) fn negative_wording(t: &ItemText, cfg: &DetectorConfig) -> Option<String> {
    let raw_caps = t
        .item
        .stem
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| *w == "NOT" || *w == "EXCEPT");
    if let Some(w) = raw_caps {
        return Some(format!("stem contains capitalized '{w}'"));
    }
    let toks = tokens(&strip_quoted(&t.item.stem));
    cfg.lexicons
        .negation_markers
        .iter()
        .find(|m| contains_run(&toks, &tokens(m)))
        .map(|m| format!("stem contains negative marker '{m}'"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_parsing() {
        assert_eq!(parse_ordinal("12"), Some(12.0));
        assert_eq!(parse_ordinal("-3.5 cm"), Some(-3.5));
        assert_eq!(parse_ordinal("1,200"), Some(1200.0));
        assert_eq!(parse_ordinal("45%"), Some(45.0));
        assert_eq!(parse_ordinal("1969-07-20"), Some(19690720.0));
        assert_eq!(parse_ordinal("twelve"), None);
        assert_eq!(parse_ordinal("12 and 13"), None);
    }

    #[test]
    fn ktype_patterns() {
        for s in ["both a and b", "a and c", "1, 2, and 3", "i and iii only", "neither x nor y", "a & b"] {
            assert!(ktype_re().is_match(s), "{s}");
        }
        for s in ["salt and pepper", "and", "b", "a bird"] {
            assert!(!ktype_re().is_match(s), "{s}");
        }
    }
}
