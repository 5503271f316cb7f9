use std::path::Path;

use itemgauge_core::io::*;
use itemgauge_core::irt::{calibrate_concepts, flag_items, CalibrationConfig, FlagThresholds};
use itemgauge_core::iwf::{detect_bank, DetectorConfig};
use itemgauge_core::screen::{pr_curve, Target};
use itemgauge_core::sim::{generate_bank, simulate_concept_records, GroundTruth, SimConfig};
use itemgauge_core::stats::{rq1_analysis, rq2_analysis};
use itemgauge_core::{join_analysis_dataset, IrtItemParams, ResponseRecord};
use tempfile::TempDir;

fn small_config(seed: u64) -> SimConfig {
    SimConfig { n_concepts: 3, items_per_concept: 10, students_per_concept: 300, seed, ..SimConfig::default() }
}

struct Fixture {
    dir: TempDir,
    config: SimConfig,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        Fixture { dir: TempDir::new().unwrap(), config: small_config(seed) }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }
}

fn records(truth: &GroundTruth, cfg: &SimConfig) -> Vec<ResponseRecord> {
    (0..cfg.n_concepts).flat_map(|k| simulate_concept_records(truth, cfg, k)).collect()
}

#[test]
fn items_responses_and_truth_round_trip() {
    let fx = Fixture::new(1);
    let bank = generate_bank(&fx.config).unwrap();
    write_items(&fx.path("items.jsonl"), &bank.items).unwrap();
    assert_eq!(read_items(&fx.path("items.jsonl")).unwrap(), bank.items);

    let recs = records(&bank.truth, &fx.config);
    write_responses(&fx.path("responses.csv"), &recs).unwrap();
    assert_eq!(read_responses(&fx.path("responses.csv")).unwrap(), recs);

    write_json(&fx.path("ground_truth.json"), &bank.truth).unwrap();
    let back: GroundTruth = read_json(&fx.path("ground_truth.json")).unwrap();
    assert_eq!(back, bank.truth);
}

#[test]
fn grouping_rejects_unknown_items_with_line() {
    let fx = Fixture::new(2);
    let bank = generate_bank(&fx.config).unwrap();
    let mut recs = records(&bank.truth, &fx.config);
    recs.truncate(5);
    recs[3].item_id = "ghost".into();
    let err = group_responses(&bank.items, &recs, Path::new("r.csv")).unwrap_err();
    assert!(matches!(err, IoError::Parse { line: 5, .. }), "{err}");
}

#[test]
fn params_and_exclusions_round_trip() {
    let fx = Fixture::new(3);
    let bank = generate_bank(&fx.config).unwrap();
    let recs = records(&bank.truth, &fx.config);
    let (matrices, dups) = group_responses(&bank.items, &recs, Path::new("r.csv")).unwrap();
    assert_eq!(dups, 0);
    assert_eq!(matrices.len(), 3);
    let mut cal = CalibrationConfig::default();
    cal.min_students_per_concept = 100;
    cal.min_responses_per_item = 100;
    let outcomes = calibrate_concepts(&matrices, &cal);
    let mut params: Vec<IrtItemParams> = Vec::new();
    let mut exclusions = Vec::new();
    for o in &outcomes {
        exclusions.extend(o.exclusions.entries.clone());
        params.extend(o.fit.as_ref().unwrap().item_params.clone());
    }
    let (params, _) = flag_items(params, &FlagThresholds::default());

    let p = fx.path("params.csv");
    write_params(&p, &params).unwrap();
    let back = read_params(&p).unwrap();
    assert_eq!(back.len(), params.len());
    for (a, b) in params.iter().zip(&back) {
        assert_eq!(a.item_id, b.item_id);
        assert_eq!(a.flags, b.flags);
        assert_eq!(a.n_responses, b.n_responses);
        assert!((a.alpha - b.alpha).abs() <= 5e-6 * a.alpha.abs());
        assert!((a.delta - b.delta).abs() <= 5e-6 * a.delta.abs());
    }
    // second cycle is exact
    let p2 = fx.path("params2.csv");
    write_params(&p2, &back).unwrap();
    assert_eq!(read_params(&p2).unwrap(), back);
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());

    let e = fx.path("exclusions.csv");
    write_exclusions(&e, &exclusions).unwrap();
    assert_eq!(read_exclusions(&e).unwrap(), exclusions);
}

#[test]
fn flaws_summary_and_report_round_trip() {
    let fx = Fixture::new(4);
    let config = SimConfig { n_concepts: 20, items_per_concept: 13, ..fx.config.clone() };
    let bank = generate_bank(&config).unwrap();
    let (ann, summary) = detect_bank(&bank.items, &DetectorConfig::default(), None);
    let f = fx.path("flaws.jsonl");
    write_flaws(&f, &ann).unwrap();
    assert_eq!(read_flaws(&f).unwrap(), ann);
    let text = std::fs::read_to_string(&f).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["flags"].as_object().unwrap().len(), 19);
    assert_eq!(first["tiers"].as_object().unwrap().len(), 19);

    let params: Vec<IrtItemParams> = bank
        .truth
        .items
        .iter()
        .map(|t| IrtItemParams {
            item_id: t.item_id.clone(),
            concept_id: t.concept_id.clone(),
            alpha: t.alpha,
            delta: t.delta,
            n_responses: 100,
            flags: Default::default(),
        })
        .collect();
    let (params, counts) = flag_items(params, &FlagThresholds::default());
    let data = join_analysis_dataset(&params, &ann);
    let report = AnalysisReport {
        summary: ReportSummary { n_items: data.len(), flaws: summary, item_flags: counts },
        rq1: rq1_analysis(&data, 0.05).unwrap(),
        rq2: rq2_analysis(&data, 0.05).unwrap(),
        rq3: None,
    };
    let r = fx.path("report.json");
    write_json(&r, &report).unwrap();
    assert_eq!(read_json::<AnalysisReport>(&r).unwrap(), report);

    write_rq1_csv(&fx.path("rq1.csv"), &report.rq1).unwrap();
    write_rq2_csv(&fx.path("rq2.csv"), &report.rq2).unwrap();
    let rq1 = std::fs::read_to_string(fx.path("rq1.csv")).unwrap();
    assert_eq!(rq1.lines().count(), 1 + report.rq1.rows.len());
    let rq2 = std::fs::read_to_string(fx.path("rq2.csv")).unwrap();
    assert_eq!(rq2.lines().count(), 1 + 19 * report.rq2.fits.len());

    let th = FlagThresholds::default();
    let labels: Vec<bool> = Target::LowDiff.values(&data, &th).iter().map(|&v| v > 0.5).collect();
    let scores: Vec<f64> = data.iter().map(|t| -t.delta).collect();
    let curve = pr_curve(&scores, &labels).unwrap();
    let c = fx.path("pr_curve.csv");
    write_pr_curve(&c, &curve).unwrap();
    let back = read_pr_curve(&c).unwrap();
    assert_eq!(back.len(), curve.len());
    assert!(back.recall.iter().zip(&curve.recall).all(|(a, b)| (a - b).abs() <= 5e-6));
}

#[test]
fn flaw_reader_rejects_missing_criteria() {
    let fx = Fixture::new(5);
    let f = fx.path("flaws.jsonl");
    std::fs::write(&f, "{\"item_id\":\"a\",\"domain\":\"math\",\"flags\":{},\"tiers\":{}}\n").unwrap();
    let err = read_flaws(&f).unwrap_err();
    assert!(err.to_string().contains("missing criterion"), "{err}");
}
