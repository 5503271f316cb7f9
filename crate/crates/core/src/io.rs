//! File formats: JSONL for text-bearing records, CSV for tabular numerics.
//!
//! Every reader validates on read and reports the 1-based line of the first
//! offending record. Writers emit UTF-8 with LF line endings and a header row.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::irt::{EntityKind, Exclusion, ExclusionReason, FlagCounts};
use crate::iwf::BankSummary;
use crate::model::{
    Criterion, DetectionTier, Domain, IrtItemParams, ItemFlag, IwfAnnotation, Mcq, ResponseMatrix,
    ResponseRecord, N_CRITERIA,
};
use crate::screen::{CvResult, ModelFamily, ModelSpec, OperatingPoint, PrCurve, Target};
use crate::stats::{Rq1Report, Rq2Report, VifValue};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::io(path, e))
}

/// Writes through a buffer and reports errors against `path`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
}

/// Formats with 6 significant digits, printed in the shortest form that
/// parses back to the same value, so a read/write cycle is stable.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

// ---------------------------------------------------------------- JSONL

/// Parses one JSON value per non-blank line, paired with its line number.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, path: &Path) -> Result<Vec<(usize, T)>, IoError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| IoError::parse(path, k + 1, e.to_string()))?;
        out.push((k + 1, v));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(w: &mut dyn Write, records: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, &r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads items and checks each against the MCQ invariants.
pub fn read_items(path: &Path) -> Result<Vec<Mcq>, IoError> {
    let items: Vec<(usize, Mcq)> = parse_jsonl(open(path)?, path)?;
    let mut seen = HashMap::new();
    for (line, item) in &items {
        let v = item.violations();
        if !v.is_empty() {
            return Err(IoError::parse(path, *line, format!("item {}: {}", item.item_id, v.join("; "))));
        }
        if let Some(first) = seen.insert(item.item_id.as_str(), *line) {
            return Err(IoError::parse(
                path,
                *line,
                format!("duplicate item_id {} (first on line {first})", item.item_id),
            ));
        }
    }
    Ok(items.into_iter().map(|(_, i)| i).collect())
}

pub fn write_items(path: &Path, items: &[Mcq]) -> Result<(), IoError> {
    write_file(path, |w| write_jsonl(w, items))
}

/// Flag, evidence, and tier maps keyed by criterion name in criterion order.
struct CriterionMap<'a, T>(&'a [T; N_CRITERIA]);

impl<T: Serialize> Serialize for CriterionMap<'_, T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(N_CRITERIA))?;
        for c in Criterion::ALL {
            m.serialize_entry(c.name(), &self.0[c.index()])?;
        }
        m.end()
    }
}

fn criterion_array<'de, D, T>(d: D) -> Result<[T; N_CRITERIA], D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de> + Copy + Default,
{
    use serde::de::Error;
    let map: BTreeMap<String, T> = BTreeMap::deserialize(d)?;
    let mut out = [T::default(); N_CRITERIA];
    let mut seen = [false; N_CRITERIA];
    for (name, v) in map {
        let c: Criterion = name.parse().map_err(|_| D::Error::custom(format!("unknown criterion {name:?}")))?;
        out[c.index()] = v;
        seen[c.index()] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(D::Error::custom(format!("missing criterion {}", Criterion::ALL[k].name())));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct FlawLine {
    item_id: String,
    domain: Domain,
    #[serde(deserialize_with = "criterion_array")]
    flags: [bool; N_CRITERIA],
    #[serde(default)]
    evidence: BTreeMap<Criterion, String>,
    #[serde(deserialize_with = "criterion_array")]
    tiers: [TierCell; N_CRITERIA],
}

#[derive(Clone, Copy, Deserialize)]
#[serde(transparent)]
struct TierCell(DetectionTier);

impl Default for TierCell {
    fn default() -> Self {
        TierCell(DetectionTier::RuleBased)
    }
}

struct FlawRef<'a>(&'a IwfAnnotation);

impl Serialize for FlawRef<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let a = self.0;
        let evidence: BTreeMap<&str, &str> =
            a.evidence.iter().map(|(c, e)| (c.name(), e.as_str())).collect();
        let mut m = s.serialize_map(Some(5))?;
        m.serialize_entry("item_id", &a.item_id)?;
        m.serialize_entry("domain", &a.domain)?;
        m.serialize_entry("flags", &CriterionMap(&a.flags))?;
        m.serialize_entry("evidence", &evidence)?;
        m.serialize_entry("tiers", &CriterionMap(&a.tiers))?;
        m.end()
    }
}

pub fn write_flaws(path: &Path, annotations: &[IwfAnnotation]) -> Result<(), IoError> {
    write_file(path, |w| write_jsonl(w, annotations.iter().map(FlawRef)))
}

pub fn read_flaws(path: &Path) -> Result<Vec<IwfAnnotation>, IoError> {
    let lines: Vec<(usize, FlawLine)> = parse_jsonl(open(path)?, path)?;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(lines.len());
    for (line, l) in lines {
        let a = IwfAnnotation {
            item_id: l.item_id,
            domain: l.domain,
            flags: l.flags,
            evidence: l.evidence,
            tiers: l.tiers.map(|t| t.0),
        };
        if !a.is_consistent() {
            return Err(IoError::parse(path, line, "evidence present for an unflagged criterion"));
        }
        if seen.insert(a.item_id.clone(), ()).is_some() {
            return Err(IoError::parse(path, line, format!("duplicate item_id {}", a.item_id)));
        }
        out.push(a);
    }
    Ok(out)
}

// ---------------------------------------------------------------- CSV

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>, IoError> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?))
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Checks the header row and returns each data record with its line number.
fn csv_records(path: &Path, expected: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>, IoError> {
    read_csv_records(csv_reader(path)?, path, expected)
}

fn read_csv_records<R: Read>(
    mut rdr: csv::Reader<R>,
    path: &Path,
    expected: &[&str],
) -> Result<Vec<(usize, csv::StringRecord)>, IoError> {
    let headers = rdr.headers().map_err(|e| IoError::parse(path, 1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(IoError::parse(path, 1, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            IoError::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec));
    }
    Ok(out)
}

const RESPONSE_HEADER: [&str; 3] = ["student_id", "item_id", "outcome"];

pub fn parse_responses(reader: impl Read, path: &Path) -> Result<Vec<ResponseRecord>, IoError> {
    let rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    read_csv_records(rdr, path, &RESPONSE_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let outcome = match &r[2] {
                "0" => 0,
                "1" => 1,
                v => return Err(IoError::parse(path, line, format!("outcome must be 0 or 1, got {v:?}"))),
            };
            if r[0].is_empty() || r[1].is_empty() {
                return Err(IoError::parse(path, line, "empty student_id or item_id"));
            }
            Ok(ResponseRecord { student_id: r[0].to_string(), item_id: r[1].to_string(), outcome })
        })
        .collect()
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>, IoError> {
    parse_responses(open(path)?, path)
}

pub fn write_responses(path: &Path, records: &[ResponseRecord]) -> Result<(), IoError> {
    write_file(path, |w| {
        let mut c = csv_writer(w);
        c.write_record(RESPONSE_HEADER).map_err(csv_io)?;
        for r in records {
            c.write_record([r.student_id.as_str(), r.item_id.as_str(), if r.outcome == 1 { "1" } else { "0" }])
                .map_err(csv_io)?;
        }
        c.flush()
    })
}

/// Groups responses into one matrix per concept, in concept-id order. Every
/// response must reference a known item. Returns the number of dropped
/// duplicate (student, item) records alongside.
pub fn group_responses(
    items: &[Mcq],
    records: &[ResponseRecord],
    path: &Path,
) -> Result<(Vec<ResponseMatrix>, usize), IoError> {
    let concept_of: HashMap<&str, &str> =
        items.iter().map(|i| (i.item_id.as_str(), i.concept_id.as_str())).collect();
    let mut by_concept: BTreeMap<&str, Vec<&ResponseRecord>> = BTreeMap::new();
    for (k, r) in records.iter().enumerate() {
        let Some(&c) = concept_of.get(r.item_id.as_str()) else {
            // header is line 1
            return Err(IoError::parse(path, k + 2, format!("unknown item_id {}", r.item_id)));
        };
        by_concept.entry(c).or_default().push(r);
    }
    let mut dups = 0;
    let matrices = by_concept
        .into_iter()
        .map(|(c, recs)| {
            let (m, d) = ResponseMatrix::from_records(c, recs);
            dups += d;
            m
        })
        .collect();
    Ok((matrices, dups))
}

const PARAMS_HEADER: [&str; 6] = ["item_id", "concept_id", "alpha", "delta", "n_responses", "flags"];

pub fn write_params(path: &Path, params: &[IrtItemParams]) -> Result<(), IoError> {
    write_file(path, |w| {
        let mut c = csv_writer(w);
        c.write_record(PARAMS_HEADER).map_err(csv_io)?;
        for p in params {
            let flags: Vec<&str> = p.flags.iter().map(|f| f.as_str()).collect();
            c.write_record([
                p.item_id.clone(),
                p.concept_id.clone(),
                fmt_sig6(p.alpha),
                fmt_sig6(p.delta),
                p.n_responses.to_string(),
                flags.join(";"),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

pub fn read_params(path: &Path) -> Result<Vec<IrtItemParams>, IoError> {
    let num = |line: usize, field: &str, v: &str| -> Result<f64, IoError> {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| IoError::parse(path, line, format!("{field}: not a finite number: {v:?}")))
    };
    let mut seen = HashMap::new();
    csv_records(path, &PARAMS_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let flags = r[5]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<ItemFlag>().map_err(|_| IoError::parse(path, line, format!("unknown flag {s:?}"))))
                .collect::<Result<_, _>>()?;
            let n_responses = r[4]
                .parse()
                .map_err(|_| IoError::parse(path, line, format!("n_responses: not a count: {:?}", &r[4])))?;
            if seen.insert(r[0].to_string(), ()).is_some() {
                return Err(IoError::parse(path, line, format!("duplicate item_id {}", &r[0])));
            }
            Ok(IrtItemParams {
                item_id: r[0].to_string(),
                concept_id: r[1].to_string(),
                alpha: num(line, "alpha", &r[2])?,
                delta: num(line, "delta", &r[3])?,
                n_responses,
                flags,
            })
        })
        .collect()
}

const EXCLUSION_HEADER: [&str; 4] = ["concept_id", "kind", "entity_id", "reason"];

pub fn write_exclusions(path: &Path, entries: &[Exclusion]) -> Result<(), IoError> {
    write_file(path, |w| {
        let mut c = csv_writer(w);
        c.write_record(EXCLUSION_HEADER).map_err(csv_io)?;
        for e in entries {
            c.write_record([e.concept_id.as_str(), e.kind.as_str(), e.entity_id.as_str(), e.reason.as_str()])
                .map_err(csv_io)?;
        }
        c.flush()
    })
}

pub fn read_exclusions(path: &Path) -> Result<Vec<Exclusion>, IoError> {
    csv_records(path, &EXCLUSION_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let kind = EntityKind::ALL
                .into_iter()
                .find(|k| k.as_str() == &r[1])
                .ok_or_else(|| IoError::parse(path, line, format!("unknown kind {:?}", &r[1])))?;
            let reason = ExclusionReason::ALL
                .into_iter()
                .find(|k| k.as_str() == &r[3])
                .ok_or_else(|| IoError::parse(path, line, format!("unknown reason {:?}", &r[3])))?;
            Ok(Exclusion { concept_id: r[0].to_string(), kind, entity_id: r[2].to_string(), reason })
        })
        .collect()
}

pub fn write_pr_curve(path: &Path, curve: &PrCurve) -> Result<(), IoError> {
    write_file(path, |w| {
        let mut c = csv_writer(w);
        c.write_record(["threshold", "precision", "recall"]).map_err(csv_io)?;
        for k in 0..curve.len() {
            c.write_record([
                fmt_sig6(curve.thresholds[k]),
                fmt_sig6(curve.precision[k]),
                fmt_sig6(curve.recall[k]),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

pub fn read_pr_curve(path: &Path) -> Result<PrCurve, IoError> {
    let mut curve = PrCurve { thresholds: Vec::new(), precision: Vec::new(), recall: Vec::new() };
    for (line, r) in csv_records(path, &["threshold", "precision", "recall"])? {
        let mut v = [0.0; 3];
        for (k, x) in v.iter_mut().enumerate() {
            *x = r[k].parse().map_err(|_| IoError::parse(path, line, format!("not a number: {:?}", &r[k])))?;
        }
        curve.thresholds.push(v[0]);
        curve.precision.push(v[1]);
        curve.recall.push(v[2]);
    }
    Ok(curve)
}

/// Correlation table, one row per (parameter, stratum, method).
pub fn write_rq1_csv(path: &Path, report: &Rq1Report) -> Result<(), IoError> {
    write_file(path, |w| {
        let mut c = csv_writer(w);
        c.write_record([
            "family", "parameter", "stratum", "method", "r", "ci_low", "ci_high", "p_raw", "p_adjusted", "n",
            "reject",
        ])
        .map_err(csv_io)?;
        for row in &report.rows {
            let k = &row.correlation;
            c.write_record([
                row.family.clone(),
                row.parameter.as_str().to_string(),
                row.stratum.to_string(),
                k.method.as_str().to_string(),
                fmt_sig6(k.r),
                fmt_sig6(k.ci95[0]),
                fmt_sig6(k.ci95[1]),
                fmt_sig6(k.p_raw),
                fmt_sig6(k.p_adjusted),
                k.n.to_string(),
                row.reject.to_string(),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })
}

/// Coefficient table with robust CIs, one row per (fit, criterion).
pub fn write_rq2_csv(path: &Path, report: &Rq2Report) -> Result<(), IoError> {
    write_file(path, |w| {
        let mut c = csv_writer(w);
        c.write_record([
            "family", "parameter", "stratum", "criterion", "estimate", "robust_se", "ci_low", "ci_high", "p_raw",
            "p_adjusted", "reject", "vif",
        ])
        .map_err(csv_io)?;
        for fit in &report.fits {
            for t in &fit.terms {
                let vif = match t.vif {
                    Some(VifValue::Finite(v)) => fmt_sig6(v),
                    Some(VifValue::Infinite) => "inf".to_string(),
                    None => String::new(),
                };
                let mut row = vec![
                    fit.family.clone(),
                    fit.parameter.as_str().to_string(),
                    fit.stratum.to_string(),
                    t.criterion.name().to_string(),
                ];
                match &t.coefficient {
                    Some(e) => row.extend([
                        fmt_sig6(e.estimate),
                        fmt_sig6(e.robust_se),
                        fmt_sig6(e.ci95[0]),
                        fmt_sig6(e.ci95[1]),
                        fmt_sig6(e.p_raw),
                        fmt_sig6(e.p_adjusted),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 6)),
                }
                row.push(t.reject.to_string());
                row.push(vif);
                c.write_record(&row).map_err(csv_io)?;
            }
        }
        c.flush()
    })
}

// ---------------------------------------------------------------- JSON documents

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(open(path)?).map_err(|e| IoError::parse(path, e.line(), e.to_string()))
}

/// Bank-level counts: detector output plus calibration flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_items: usize,
    pub flaws: BankSummary,
    pub item_flags: FlagCounts,
}

/// One model family's nested-CV outcome for a screening task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: ModelFamily,
    pub grid_size: usize,
    pub cv: CvResultSummary,
}

/// A `CvResult` without the per-item prediction vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResultSummary {
    pub best_spec: ModelSpec,
    pub metrics: crate::screen::MetricSet,
    pub folds: Vec<crate::screen::FoldResult>,
}

impl From<&CvResult> for CvResultSummary {
    fn from(r: &CvResult) -> Self {
        CvResultSummary { best_spec: r.best_spec, metrics: r.metrics, folds: r.folds.clone() }
    }
}

/// Threshold chosen on the held-out predictions of one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub family: ModelFamily,
    pub target_precision: f64,
    /// `None` when no threshold reaches the target precision.
    pub point: Option<OperatingPoint>,
    pub diagnostic: Option<String>,
}

/// Screening results for one task (the `rq3` report section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub task: Target,
    pub grid: String,
    pub seed: u64,
    pub n_items: usize,
    pub families: Vec<FamilyResult>,
    pub threshold: Option<ThresholdChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub summary: ReportSummary,
    pub rq1: Rq1Report,
    pub rq2: Rq2Report,
    /// Filled by the screen command; analyze leaves it empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rq3: Option<ScreenReport>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_rounds_and_is_stable() {
        assert_eq!(fmt_sig6(1.234_567_89), "1.23457");
        assert_eq!(fmt_sig6(-0.000_123_456_7), "-0.000123457");
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(-0.0), "0");
        assert_eq!(fmt_sig6(2.0), "2");
        for x in [1.0 / 3.0, 12345.678, -9.87654321e-7, 6.02214076e23] {
            let s = fmt_sig6(x);
            assert_eq!(fmt_sig6(s.parse().unwrap()), s);
        }
    }

    #[test]
    fn response_outcome_must_be_binary() {
        let text = "student_id,item_id,outcome\ns0,i0,1\ns1,i1,2\n";
        let err = parse_responses(text.as_bytes(), Path::new("r.csv")).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("r.csv:3"));
    }

    #[test]
    fn response_header_checked() {
        let err = parse_responses("a,b,c\n".as_bytes(), Path::new("r.csv")).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 1, .. }));
    }

    #[test]
    fn header_only_is_empty() {
        let r = parse_responses("student_id,item_id,outcome\n".as_bytes(), Path::new("r.csv")).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn jsonl_reports_line() {
        let text = "{\"a\":1}\n\nnot json\n";
        let err = parse_jsonl::<serde_json::Value>(text.as_bytes(), Path::new("x.jsonl")).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }));
    }
}
