//! Normalization and tokenization shared by the flaw heuristics.

use std::collections::HashSet;
use std::sync::OnceLock;

use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

static STOPWORDS_TXT: &str = include_str!("../../lexicons/stopwords.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| parse_lines(STOPWORDS_TXT).collect())
}

/// Non-empty, non-comment lines of a lexicon file, trimmed.
pub fn parse_lines(src: &str) -> impl Iterator<Item = &str> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// NFKC, lowercase, whitespace collapsed to single spaces, trimmed.
pub fn normalize(s: &str) -> String {
    let lowered: String = s.nfkc().collect::<String>().to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased Unicode words of the NFKC form of `s`.
pub fn tokens(s: &str) -> Vec<String> {
    let n = normalize(s);
    n.unicode_words().map(str::to_string).collect()
}

pub fn is_stopword(t: &str) -> bool {
    stopwords().contains(t)
}

/// Tokens with stopwords removed, in order.
pub fn content_words(s: &str) -> Vec<String> {
    tokens(s).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// True when `needle` occurs as a contiguous run inside `hay`.
pub fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Removes text between matching straight or curly double quotes.
pub fn strip_quoted(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut inside = false;
    for ch in s.chars() {
        match ch {
            '"' | '\u{201C}' | '\u{201D}' => {
                inside = !inside;
                out.push(' ');
            }
            _ if !inside => out.push(ch),
            _ => {}
        }
    }
    out
}

/// Sentences delimited by `.`, `?` or `!` followed by whitespace or end of text.
pub fn sentences(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = s.chars().collect();
    for (k, &c) in chars.iter().enumerate() {
        cur.push(c);
        let terminal = matches!(c, '.' | '?' | '!');
        let boundary = chars.get(k + 1).is_none_or(|n| n.is_whitespace());
        if terminal && boundary {
            push_sentence(&mut out, &mut cur);
        }
    }
    push_sentence(&mut out, &mut cur);
    out
}

fn push_sentence(out: &mut Vec<String>, cur: &mut String) {
    let t = cur.trim();
    if t.chars().any(char::is_alphanumeric) {
        out.push(t.to_string());
    }
    cur.clear();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_list_has_150_entries() {
        assert_eq!(parse_lines(STOPWORDS_TXT).count(), 150);
        assert_eq!(stopwords().len(), 150);
    }

    #[test]
    fn normalization_collapses_and_folds() {
        assert_eq!(normalize("  All\tof   the\nABOVE "), "all of the above");
        // fullwidth letters fold under NFKC
        assert_eq!(normalize("ＡＢＣ"), "abc");
    }

    #[test]
    fn tokens_skip_blanks_and_punctuation() {
        assert_eq!(tokens("The ____ is red, isn't it?"), ["the", "is", "red", "isn't", "it"]);
        assert_eq!(content_words("The mitochondria of the cell"), ["mitochondria", "cell"]);
    }

    #[test]
    fn sentence_split() {
        assert_eq!(sentences("One. Two has 3.5 units! Three?").len(), 3);
        assert_eq!(sentences("No terminal punctuation").len(), 1);
        assert!(sentences("  ").is_empty());
    }

    #[test]
    fn quoted_text_removed() {
        assert_eq!(strip_quoted(r#"Say "not now" please"#).split_whitespace().collect::<Vec<_>>(), ["Say", "please"]);
    }
}
