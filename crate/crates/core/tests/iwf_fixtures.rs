use std::collections::BTreeMap;

use itemgauge_core::iwf::{criterion_kind, detect, detect_bank, CriterionKind, DetectorConfig};
use itemgauge_core::{Criterion, Mcq};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    criterion: Criterion,
    expected: bool,
    item: Mcq,
}

fn cases() -> Vec<Case> {
    include_str!("fixtures/rule_cases.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("fixture line"))
        .collect()
}

#[test]
fn corpus_covers_every_rule_criterion() {
    let mut tally: BTreeMap<Criterion, (usize, usize)> = BTreeMap::new();
    for c in cases() {
        let e = tally.entry(c.criterion).or_default();
        if c.expected { e.0 += 1 } else { e.1 += 1 }
    }
    for c in Criterion::ALL {
        if criterion_kind(c) == CriterionKind::Rule {
            let (p, n) = tally.get(&c).copied().unwrap_or_default();
            assert!(p >= 3 && n >= 3, "{c:?}: {p} positive / {n} negative");
        }
    }
}

#[test]
fn rule_fixtures_agree() {
    let cfg = DetectorConfig::default();
    let mismatches: Vec<String> = cases()
        .iter()
        .filter(|c| detect(&c.item, &cfg, None).flag(c.criterion) != c.expected)
        .map(|c| format!("{} expected {}", c.item.item_id, c.expected))
        .collect();
    assert!(mismatches.is_empty(), "{mismatches:#?}");
}

#[test]
fn bank_output_is_deterministic_and_ordered() {
    let items: Vec<Mcq> = cases().into_iter().map(|c| c.item).collect();
    let cfg = DetectorConfig::default();
    let (a, sa) = detect_bank(&items, &cfg, None);
    let (b, sb) = detect_bank(&items, &cfg, None);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    for (ann, item) in a.iter().zip(&items) {
        assert_eq!(ann.item_id, item.item_id);
        assert!(ann.is_consistent());
    }
}
