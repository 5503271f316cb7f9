mod common;

use common::*;
use itemgauge_core::io::{self, AnalysisReport, ScreenReport};
use itemgauge_core::iwf::BankSummary;
use itemgauge_core::screen::MetricSet;
use itemgauge_core::sim::{generate_bank, SimConfig};
use itemgauge_core::stats::{CorrMethod, Parameter, Stratum};
use itemgauge_core::{Criterion, DetectionTier, Domain, Mcq};
use serde_json::json;
use tempfile::TempDir;

fn sim_json(extra: serde_json::Value) -> serde_json::Value {
    let mut base = json!({ "n_concepts": 2, "items_per_concept": 13, "students_per_concept": 60 });
    base.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    json!({ "simulation": base })
}

#[test]
fn simulate_counts_items_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", sim_json(json!({ "n_concepts": 10 })));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let r = itemgauge(&["--config", p(&cfg), "--jobs", jobs, "simulate", "-o", p(out)], &[]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    let items = std::fs::read_to_string(a.join("items.jsonl")).unwrap();
    assert_eq!(items.lines().count(), 130);
    assert_eq!(snapshot(&a), snapshot(&b));
    let again = dir.path().join("c");
    itemgauge(&["--config", p(&cfg), "--seed", "8", "simulate", "-o", p(&again)], &[]);
    assert_ne!(snapshot(&a)["responses.csv"], snapshot(&again)["responses.csv"]);
}

#[test]
fn zero_response_rate_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", sim_json(json!({ "response_rate": 0.0 })));
    let r = itemgauge(&["--config", p(&cfg), "simulate", "-o", p(dir.path())], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(std::fs::read_to_string(dir.path().join("responses.csv")).unwrap(), "student_id,item_id,outcome\n");
}

#[test]
fn invalid_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad.json", sim_json(json!({ "response_rate": 1.5 })));
    assert_eq!(itemgauge(&["--config", p(&bad), "simulate", "-o", p(dir.path())], &[]).code, 2);
    let unknown = write_config(dir.path(), "unknown.json", json!({ "simulaton": {} }));
    let r = itemgauge(&["--config", p(&unknown), "simulate", "-o", p(dir.path())], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("unknown field"), "{}", r.stderr);
}

fn write_bank(dir: &std::path::Path, items: &[Mcq]) -> std::path::PathBuf {
    let path = dir.join("items.jsonl");
    io::write_items(&path, items).unwrap();
    path
}

#[test]
fn malformed_outcome_names_the_line() {
    let dir = TempDir::new().unwrap();
    let items = write_bank(dir.path(), &single_flaw_bank());
    let responses = dir.path().join("responses.csv");
    std::fs::write(&responses, "student_id,item_id,outcome\ns0,f00,1\ns1,f00,2\n").unwrap();
    let r = itemgauge(&["calibrate", "--items", p(&items), "--responses", p(&responses), "-o", p(dir.path())], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("responses.csv:3"), "{}", r.stderr);
}

#[test]
fn one_concept_params_cover_retained_items() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        sim_json(json!({ "n_concepts": 1, "students_per_concept": 800, "response_rate": 1.0 })),
    );
    let sim = dir.path().join("sim");
    assert_eq!(itemgauge(&["--config", p(&cfg), "simulate", "-o", p(&sim)], &[]).code, 0);
    let out = dir.path().join("cal");
    let r = itemgauge(
        &[
            "calibrate",
            "--items",
            p(&sim.join("items.jsonl")),
            "--responses",
            p(&sim.join("responses.csv")),
            "-o",
            p(&out),
        ],
        &[],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let params = io::read_params(&out.join("params.csv")).unwrap();
    let excluded_items = io::read_exclusions(&out.join("exclusions.csv"))
        .unwrap()
        .iter()
        .filter(|e| e.kind == itemgauge_core::irt::EntityKind::Item)
        .count();
    assert_eq!(params.len(), 13 - excluded_items);
    assert!(params.len() >= 12);
    let manifest: serde_json::Value = io::read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest["inputs"]["items.jsonl"], sha(&sim.join("items.jsonl")));
    assert_eq!(manifest["outputs"]["params.csv"], sha(&out.join("params.csv")));
}

fn sha(path: &std::path::Path) -> String {
    itemgauge_cli::sha256_file(path).unwrap()
}

#[test]
fn no_eligible_concept_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", sim_json(json!({})));
    let sim = dir.path().join("sim");
    assert_eq!(itemgauge(&["--config", p(&cfg), "simulate", "-o", p(&sim)], &[]).code, 0);
    let r = itemgauge(
        &["calibrate", "--items", p(&sim.join("items.jsonl")), "--responses", p(&sim.join("responses.csv")), "-o", p(dir.path())],
        &[],
    );
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn empty_options_item_exits_2() {
    let dir = TempDir::new().unwrap();
    let items = dir.path().join("items.jsonl");
    std::fs::write(
        &items,
        "{\"item_id\":\"q\",\"concept_id\":\"c\",\"domain\":\"math\",\"stem\":\"What?\",\"options\":[],\"correct_index\":0}\n",
    )
    .unwrap();
    let r = itemgauge(&["detect", "--items", p(&items), "-o", p(dir.path())], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("items.jsonl:1"), "{}", r.stderr);
}

#[test]
fn single_flaw_bank_has_one_flaw_per_item() {
    let dir = TempDir::new().unwrap();
    let items = write_bank(dir.path(), &single_flaw_bank());
    let r = itemgauge(&["detect", "--items", p(&items), "-o", p(dir.path())], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let summary: BankSummary = io::read_json(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary.n_items, 19);
    assert_eq!(summary.flaws_per_item, 1.0);
    let flaws = io::read_flaws(&dir.path().join("flaws.jsonl")).unwrap();
    for (a, c) in flaws.iter().zip(Criterion::ALL) {
        assert_eq!(a.flagged().collect::<Vec<_>>(), vec![c]);
        assert!(a.tiers.iter().all(|&t| t != DetectionTier::ExternalVerifier));
    }
}

fn verifier_config(dir: &std::path::Path) -> std::path::PathBuf {
    write_config(dir, "v.json", json!({ "detector": { "verifier": { "enabled": true, "timeout_ms": 2000 } } }))
}

#[test]
fn verifier_answers_set_external_tier() {
    let dir = TempDir::new().unwrap();
    let items = write_bank(dir.path(), &single_flaw_bank()[..4]);
    let cfg = verifier_config(dir.path());
    let url = stub_verifier(r#"{"flagged": true, "rationale": "stub"}"#);
    let r = itemgauge(
        &["--config", p(&cfg), "detect", "--items", p(&items), "-o", p(dir.path())],
        &[("ITEMGAUGE_VERIFIER_URL", &url), ("ITEMGAUGE_VERIFIER_KEY", "secret")],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let flaws = io::read_flaws(&dir.path().join("flaws.jsonl")).unwrap();
    let mtoc = Criterion::MoreThanOneCorrect.index();
    for a in &flaws {
        assert_eq!(a.tiers[mtoc], DetectionTier::ExternalVerifier);
        assert!(a.flags[mtoc]);
        assert_eq!(a.evidence[&Criterion::MoreThanOneCorrect], "stub");
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(!manifest.contains("secret") && !manifest.contains(&url));
}

#[test]
fn verifier_outage_degrades_without_aborting() {
    let dir = TempDir::new().unwrap();
    let items = write_bank(dir.path(), &single_flaw_bank()[..3]);
    let cfg = verifier_config(dir.path());
    // nothing listens on the discard port
    let r = itemgauge(
        &["--config", p(&cfg), "detect", "--items", p(&items), "-o", p(dir.path())],
        &[("ITEMGAUGE_VERIFIER_URL", "http://127.0.0.1:9/verify")],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let flaws = io::read_flaws(&dir.path().join("flaws.jsonl")).unwrap();
    assert!(flaws.iter().all(|a| a.tiers[Criterion::MoreThanOneCorrect.index()] == DetectionTier::VerifierUnavailable));

    let offline = dir.path().join("offline");
    let r = itemgauge(
        &["--config", p(&cfg), "--offline", "detect", "--items", p(&items), "-o", p(&offline)],
        &[("ITEMGAUGE_VERIFIER_URL", "http://127.0.0.1:9/verify")],
    );
    assert_eq!(r.code, 0);
    let flaws = io::read_flaws(&offline.join("flaws.jsonl")).unwrap();
    assert!(flaws.iter().all(|a| a.tiers[Criterion::MoreThanOneCorrect.index()] == DetectionTier::Heuristic));
}

/// Simulated bank with true parameters as params.csv and detected flaws.
fn analysis_inputs(dir: &std::path::Path, config: SimConfig) -> (std::path::PathBuf, std::path::PathBuf) {
    let bank = generate_bank(&config).unwrap();
    let params = dir.join("params.csv");
    write_true_params(&bank, &params);
    let items = write_bank(dir, &bank.items);
    let det = dir.join("det");
    assert_eq!(itemgauge(&["detect", "--items", p(&items), "-o", p(&det)], &[]).code, 0);
    (params, det.join("flaws.jsonl"))
}

#[test]
fn analyze_recovers_negative_flaw_effect() {
    use itemgauge_core::sim::CriterionVector;
    let dir = TempDir::new().unwrap();
    let config = SimConfig {
        n_concepts: 60,
        students_per_concept: 1,
        flaw_prevalence: CriterionVector::filled(0.05).with(Criterion::MoreThanOneCorrect, 0.3),
        effect_on_delta: CriterionVector::zeros().with(Criterion::MoreThanOneCorrect, -1.0),
        effect_on_alpha: CriterionVector::zeros(),
        ..SimConfig::default()
    };
    let (params, flaws) = analysis_inputs(dir.path(), config);
    let out = dir.path().join("ana");
    let r = itemgauge(&["analyze", "--params", p(&params), "--flaws", p(&flaws), "-o", p(&out)], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: AnalysisReport = io::read_json(&out.join("report.json")).unwrap();
    let row = report.rq1.find(Parameter::Delta, Stratum::Pooled, CorrMethod::Pearson).unwrap();
    assert!(row.correlation.r < 0.0 && row.correlation.p_adjusted < 0.05, "{row:?}");
    assert_eq!(row.family, "rq1/delta");
    let fit = report.rq2.find(Parameter::Delta, Stratum::Pooled).unwrap();
    let term = &fit.terms[Criterion::MoreThanOneCorrect.index()];
    assert!(term.reject && term.coefficient.as_ref().unwrap().estimate < 0.0);
    assert!(out.join("rq1.csv").exists() && out.join("rq2.csv").exists());

    let math = dir.path().join("math");
    let r = itemgauge(
        &["analyze", "--params", p(&params), "--flaws", p(&flaws), "--domain", "math", "-o", p(&math)],
        &[],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: AnalysisReport = io::read_json(&math.join("report.json")).unwrap();
    assert!(report.rq1.rows.iter().all(|row| matches!(row.stratum, Stratum::Pooled | Stratum::Domain(Domain::Math))));
}

#[test]
fn disjoint_inputs_exit_3() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("params.csv");
    std::fs::write(&params, "item_id,concept_id,alpha,delta,n_responses,flags\nzz,c,1,0,900,\n").unwrap();
    let items = write_bank(dir.path(), &single_flaw_bank());
    assert_eq!(itemgauge(&["detect", "--items", p(&items), "-o", p(dir.path())], &[]).code, 0);
    let flaws = dir.path().join("flaws.jsonl");
    for cmd in [vec!["analyze"], vec!["screen", "--task", "delta"]] {
        let mut args = cmd.clone();
        args.extend(["--params", p(&params), "--flaws", p(&flaws), "-o", p(dir.path())]);
        assert_eq!(itemgauge(&args, &[]).code, 3);
    }
}

#[test]
fn screen_reports_families_and_threshold() {
    use itemgauge_core::sim::CriterionVector;
    let dir = TempDir::new().unwrap();
    let config = SimConfig {
        n_concepts: 50,
        students_per_concept: 1,
        flaw_prevalence: CriterionVector::filled(0.05).with(Criterion::LongestOptionCorrect, 0.1),
        effect_on_delta: CriterionVector::zeros().with(Criterion::LongestOptionCorrect, -3.0),
        effect_on_alpha: CriterionVector::zeros(),
        ..SimConfig::default()
    };
    let (params, flaws) = analysis_inputs(dir.path(), config);
    let out = dir.path().join("scr");
    let r = itemgauge(
        &["screen", "--params", p(&params), "--flaws", p(&flaws), "--task", "low-diff", "--grid", "small", "-o", p(&out)],
        &[],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: ScreenReport = io::read_json(&out.join("metrics.json")).unwrap();
    assert_eq!(report.families.len(), 4);
    let logistic = report.families.iter().find(|f| f.family.as_str() == "logistic_l2").unwrap();
    let MetricSet::Classification(m) = logistic.cv.metrics else { panic!("classification") };
    assert!(m.auc > 0.7, "{m:?}");
    let choice = report.threshold.unwrap();
    match choice.point {
        Some(pt) => assert!(pt.precision >= 0.8),
        None => assert!(choice.diagnostic.is_some()),
    }
    let curve = std::fs::read_to_string(out.join("pr_curve.csv")).unwrap();
    assert!(curve.starts_with("threshold,precision,recall\n"));

    let reg = dir.path().join("reg");
    let r = itemgauge(
        &["screen", "--params", p(&params), "--flaws", p(&flaws), "--task", "delta", "--grid", "small", "-o", p(&reg)],
        &[],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(!reg.join("pr_curve.csv").exists());
}

#[test]
fn too_few_positives_exit_4() {
    let dir = TempDir::new().unwrap();
    let mut bank = single_flaw_bank();
    for k in 0..20 {
        let mut m = bank[0].clone();
        m.item_id = format!("x{k:02}");
        bank.push(m);
    }
    let items = write_bank(dir.path(), &bank);
    assert_eq!(itemgauge(&["detect", "--items", p(&items), "-o", p(dir.path())], &[]).code, 0);
    let mut csv = String::from("item_id,concept_id,alpha,delta,n_responses,flags\n");
    for (k, m) in bank.iter().enumerate() {
        let delta = if k < 3 { 3.0 } else { 0.0 };
        csv.push_str(&format!("{},c0,1,{delta},900,\n", m.item_id));
    }
    let params = dir.path().join("params.csv");
    std::fs::write(&params, csv).unwrap();
    let flaws = dir.path().join("flaws.jsonl");
    let r = itemgauge(
        &["screen", "--params", p(&params), "--flaws", p(&flaws), "--task", "high-diff", "-o", p(dir.path())],
        &[],
    );
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("3 positive"), "{}", r.stderr);
}
