//! Slot-filled item text that realizes a chosen set of flaws.
//!
//! Base items use invented two-word answers that share no vocabulary with the
//! stem or with each other, so a flawless template trips no detector. Each
//! flaw then edits the stem or the options in a way the matching detector
//! recognizes. Some flaw pairs cannot be realized together (numeric options
//! and text-level option cues, for instance); the later edit wins and the
//! ground-truth flag is kept regardless.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Criterion, N_CRITERIA};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateSpec {
    pub flaws: [bool; N_CRITERIA],
    /// Unit number mentioned in the stem.
    pub unit: usize,
}

const ONSETS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const FILLERS: &[&str] = &[
    "Mara keeps a garden journal.",
    "The school bus arrived late today.",
    "Jonah painted the fence last spring.",
    "A gentle rain fell over the town.",
    "Priya collects postcards from museums.",
    "The library closes early on Fridays.",
];

struct Words<'a> {
    rng: &'a mut ChaCha8Rng,
    used: HashSet<String>,
}

impl Words<'_> {
    fn pick(&mut self, set: &[u8]) -> char {
        set[self.rng.random_range(0..set.len())] as char
    }

    /// Invented word: CVCVCVC, or VCVCVC when `vowel_start`.
    fn word(&mut self, vowel_start: bool) -> String {
        loop {
            let mut w = String::new();
            if vowel_start {
                w.push(self.pick(VOWELS));
            }
            for _ in 0..3 {
                w.push(self.pick(ONSETS));
                w.push(self.pick(VOWELS));
            }
            if !vowel_start {
                w.push(self.pick(ONSETS));
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn pair(&mut self, vowel_start: bool) -> String {
        let a = self.word(vowel_start);
        let b = self.word(false);
        format!("{a} {b}")
    }
}

fn ordered_numbers(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut nums: Vec<u32> = Vec::new();
    while nums.len() < 4 {
        let n = rng.random_range(100..1000);
        if !nums.contains(&n) {
            nums.push(n);
        }
    }
    loop {
        nums.shuffle(rng);
        let asc = nums.windows(2).all(|w| w[0] <= w[1]);
        let desc = nums.windows(2).all(|w| w[0] >= w[1]);
        if !asc && !desc {
            return nums.iter().map(|n| n.to_string()).collect();
        }
    }
}

/// Builds (stem, options, correct_index) realizing the flaws in `spec`.
pub fn realize_item(spec: &TemplateSpec, rng: &mut ChaCha8Rng) -> (String, Vec<String>, usize) {
    use Criterion::*;
    let has = |c: Criterion| spec.flaws[c.index()];
    let gram = has(GrammaticalCues);
    let mut words = Words { rng, used: HashSet::new() };

    let c_a = words.word(false);
    let c_b = words.word(false);
    let topic = format!("{c_a} {c_b}");
    let unit = format!("unit {}", spec.unit);

    let true_false = has(TrueFalseQuestion);
    let numeric = !true_false && has(LostSequence) && !has(AllOfTheAbove) && !has(NoneOfTheAbove);

    let (mut options, correct) = if true_false {
        let k = words.rng.random_range(0..2);
        (vec!["True".to_string(), "False".to_string()], k)
    } else if numeric {
        let k = words.rng.random_range(0..4);
        (ordered_numbers(words.rng), k)
    } else {
        let k = words.rng.random_range(0..4);
        let opts = (0..4).map(|i| words.pair(gram && i == k)).collect();
        (opts, k)
    };
    let mut claimed = vec![false; options.len()];
    claimed[correct] = true;

    let text_mode = !true_false && !numeric;
    if text_mode {
        let distractors: Vec<usize> = (0..options.len()).filter(|&i| i != correct).collect();
        let first_word = |s: &str| s.split(' ').next().unwrap_or("").to_string();
        if has(LogicalCues) {
            let shared = words.word(false);
            let lead = first_word(&options[correct]);
            options[correct] = if gram { format!("{lead} {c_a} {c_b}") } else { topic.clone() };
            for (n, &d) in distractors.iter().enumerate() {
                let head = if n == 0 {
                    if has(WordRepeats) { c_b.clone() } else { format!("{c_b} {c_a}") }
                } else {
                    words.word(false)
                };
                options[d] = format!("{head} {shared}");
                claimed[d] = n == 0;
            }
        } else {
            if has(WordRepeats) {
                let lead = first_word(&options[correct]);
                options[correct] = format!("{lead} {c_a}");
            }
            if has(ConvergenceCues) {
                let shared = words.word(false);
                let lead = first_word(&options[correct]);
                options[correct] = format!("{lead} {shared}");
                let d = distractors[0];
                let head = first_word(&options[d]);
                options[d] = format!("{head} {shared}");
                claimed[d] = true;
            }
        }
        if has(LongestOptionCorrect) {
            let longest = |opts: &[String]| {
                opts.iter()
                    .enumerate()
                    .filter(|(i, _)| *i != correct)
                    .map(|(_, o)| o.chars().count())
                    .max()
                    .unwrap_or(0)
            };
            while (options[correct].chars().count() as f64) < 1.6 * longest(&options) as f64 {
                let w = words.word(false);
                options[correct] = format!("{} {w}", options[correct]);
            }
        }
    }

    let place = |options: &mut Vec<String>, claimed: &mut Vec<bool>, text: String| {
        if let Some(slot) = (0..options.len()).find(|&i| !claimed[i] && text_mode) {
            options[slot] = text;
            claimed[slot] = true;
        } else {
            options.push(text);
            claimed.push(true);
        }
    };
    if text_mode {
        if has(MoreThanOneCorrect) {
            let c = &options[correct];
            let mut chars = c.chars();
            let first: String = chars.next().map(|f| f.to_uppercase().collect()).unwrap_or_default();
            let dup = format!("{first}{}", chars.as_str()).replacen(' ', "  ", 1);
            place(&mut options, &mut claimed, dup);
        }
        if has(ImplausibleDistractors) {
            let a = words.pick(ONSETS).to_ascii_uppercase();
            let b = words.pick(ONSETS);
            place(&mut options, &mut claimed, format!("{a}{b}"));
        }
        if has(AbsoluteTerms) {
            let p = words.pair(false);
            place(&mut options, &mut claimed, format!("Never {p}"));
        }
        if has(VagueTerms) {
            let p = words.pair(false);
            place(&mut options, &mut claimed, format!("Sometimes {p}"));
        }
        if has(ComplexKType) {
            place(&mut options, &mut claimed, "Both A and B".to_string());
        }
    }
    if has(NoneOfTheAbove) {
        place(&mut options, &mut claimed, "None of the above".to_string());
    }
    if has(AllOfTheAbove) {
        options.push("All of the above".to_string());
    }

    let mut sentences: Vec<String> = Vec::new();
    if has(AmbiguousUnclear) {
        sentences.push(format!("This is covered in {unit}."));
    }
    if has(GratuitousInformation) {
        let i = words.rng.random_range(0..FILLERS.len());
        let j = (i + 1 + words.rng.random_range(0..FILLERS.len() - 1)) % FILLERS.len();
        sentences.push(FILLERS[i].to_string());
        sentences.push(FILLERS[j].to_string());
    }
    let negative = has(NegativeWording);
    let a_an = "an";
    let main = if has(UnfocusedStem) {
        let mut core = if has(FillInTheBlank) {
            format!("The ____ of the {topic}")
        } else {
            format!("The {topic} of {unit}")
        };
        if negative {
            core = format!("{core}, not {}", spec.unit + 1);
        }
        if gram {
            format!("{core}: {a_an}")
        } else {
            format!("{core}.")
        }
    } else if has(FillInTheBlank) {
        let verb = if negative { "is not" } else { "is" };
        if gram {
            format!("The ____ of the {topic} {verb} known as {a_an}")
        } else {
            format!("The ____ {verb} the name of the {topic} studied in {unit}.")
        }
    } else if gram {
        let verb = if negative { "is not" } else { "is" };
        format!("The {topic} studied in {unit} {verb} best described as {a_an}")
    } else if negative {
        format!("Which term does not name the {topic} studied in {unit}?")
    } else {
        format!("Which term names the {topic} studied in {unit}?")
    };
    sentences.push(main);
    (sentences.join(" "), options, correct)
}
