//! Pipelines behind the `itemgauge` binary.
//!
//! Each command reads its inputs, writes its outputs plus a `manifest.json`
//! into the output directory, and maps failures onto a fixed exit-code
//! contract: 0 success, 2 input error, 3 empty result, 4 infeasible task.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use itemgauge_core::io::{self, AnalysisReport, IoError, ReportSummary, ScreenReport};
use itemgauge_core::irt::{
    calibrate_concepts, flag_items, CalibrationConfig, CalibrationError, FlagCounts, FlagThresholds,
};
use itemgauge_core::iwf::{
    detect_bank, parse_response, summarize, DetectorConfig, Lexicons, Verifier, VerifierError,
    VerifierRequest, VerifierResponse,
};
use itemgauge_core::screen::{
    cv_evaluate, grid, pr_curve, select_threshold, CvConfig, GridProfile, ModelFamily, ScreenError, Target,
};
use itemgauge_core::sim::{generate_bank, simulate_concept_records, SimConfig};
use itemgauge_core::stats::{rq1_analysis, rq2_analysis, CorrMethod, Parameter, StatsError, Stratum};
use itemgauge_core::{join_analysis_dataset, AnalysisTuple, Domain, ItemFlag, ResponseRecord};

pub const ENV_VERIFIER_URL: &str = "ITEMGAUGE_VERIFIER_URL";
pub const ENV_VERIFIER_KEY: &str = "ITEMGAUGE_VERIFIER_KEY";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Empty(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Input(_) => 2,
            CliError::Empty(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "itemgauge", version, about = "Item calibration and item-writing-flaw analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON configuration file; missing sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Never contact the external verifier.
    #[arg(long, global = true)]
    pub offline: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bank: items.jsonl, responses.csv, ground_truth.json.
    Simulate {
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit per-concept 2PL parameters: params.csv, exclusions.csv.
    Calibrate {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Annotate items with the 19 flaw criteria: flaws.jsonl, summary.json.
    Detect {
        #[arg(long)]
        items: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Correlation and regression analysis: report.json, rq1.csv, rq2.csv.
    Analyze {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        flaws: PathBuf,
        /// Family-wise significance level.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Comma-separated domains to keep (life_earth, physical, math, other).
        #[arg(long)]
        domain: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Nested-CV screening models: metrics.json, pr_curve.csv.
    Screen {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        flaws: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum, default_value_t = GridArg::Paper)]
        grid: GridArg,
        #[arg(long, default_value_t = 0.8)]
        target_precision: f64,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Alpha,
    Delta,
    LowDisc,
    LowDiff,
    HighDiff,
}

impl From<TaskArg> for Target {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Alpha => Target::Alpha,
            TaskArg::Delta => Target::Delta,
            TaskArg::LowDisc => Target::LowDisc,
            TaskArg::LowDiff => Target::LowDiff,
            TaskArg::HighDiff => Target::HighDiff,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GridArg {
    Small,
    Paper,
}

impl From<GridArg> for GridProfile {
    fn from(g: GridArg) -> Self {
        match g {
            GridArg::Small => GridProfile::Small,
            GridArg::Paper => GridProfile::Paper,
        }
    }
}

/// Every command's settings, one section each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub simulation: SimConfig,
    pub calibration: CalibrationConfig,
    pub thresholds: FlagThresholds,
    pub detector: DetectorConfig,
    /// Directory of lexicon files replacing the built-in lists.
    pub lexicon_dir: Option<PathBuf>,
    pub cv: CvConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = fs::read_to_string(path).map_err(|e| IoError::Io { path: path.into(), source: e })?;
        let mut config: Config = serde_json::from_str(&text).map_err(|e| IoError::Parse {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Some(dir) = &config.lexicon_dir {
            let dir = if dir.is_relative() { path.parent().unwrap_or(Path::new(".")).join(dir) } else { dir.clone() };
            config.detector.lexicons = Lexicons::from_dir(&dir).map_err(|e| CliError::Input(e.to_string()))?;
        }
        Ok(config)
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub arguments: BTreeMap<String, String>,
    pub config: serde_json::Value,
    /// SHA-256 of each input, keyed by file name.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the Unix epoch, from SOURCE_DATE_EPOCH (0 when unset).
    pub created: u64,
}

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::Io { path: path.into(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

struct Run<'a> {
    command: &'static str,
    out: &'a Path,
    seed: Option<u64>,
    arguments: BTreeMap<String, String>,
    config: serde_json::Value,
    inputs: Vec<&'a Path>,
    outputs: Vec<&'static str>,
}

impl<'a> Run<'a> {
    fn new(command: &'static str, out: &'a Path, config: serde_json::Value) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| IoError::Io { path: out.into(), source: e })?;
        Ok(Run { command, out, seed: None, arguments: BTreeMap::new(), config, inputs: Vec::new(), outputs: Vec::new() })
    }

    fn path(&mut self, name: &'static str) -> PathBuf {
        self.outputs.push(name);
        self.out.join(name)
    }

    fn arg(&mut self, k: &str, v: impl ToString) {
        self.arguments.insert(k.to_string(), v.to_string());
    }

    fn finish(self) -> Result<(), CliError> {
        let digests = |paths: &mut dyn Iterator<Item = PathBuf>| -> Result<BTreeMap<String, String>, IoError> {
            paths.map(|p| Ok((file_name(&p), sha256_file(&p)?))).collect()
        };
        let created = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            arguments: self.arguments,
            config: self.config,
            inputs: digests(&mut self.inputs.iter().map(|p| p.to_path_buf()))?,
            outputs: digests(&mut self.outputs.iter().map(|n| self.out.join(n)))?,
            created,
        };
        io::write_json(&self.out.join(MANIFEST), &manifest)?;
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

/// Runs a parsed command line on a pool sized by `--jobs`.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Input(e.to_string()))?;
    pool.install(|| dispatch(&cli.global, &cli.command))
}

fn dispatch(g: &GlobalArgs, cmd: &Command) -> Result<(), CliError> {
    let config = Config::load(g.config.as_deref())?;
    match cmd {
        Command::Simulate { out } => simulate(g, config, out),
        Command::Calibrate { items, responses, out } => calibrate(config, items, responses, out),
        Command::Detect { items, out } => detect(g, config, items, out),
        Command::Analyze { params, flaws, alpha, domain, out } => {
            analyze(params, flaws, *alpha, domain.as_deref(), out)
        }
        Command::Screen { params, flaws, task, grid, target_precision, domain, out } => screen(
            g,
            config,
            ScreenArgs {
                params,
                flaws,
                task: (*task).into(),
                grid: (*grid).into(),
                target_precision: *target_precision,
                domain: domain.as_deref(),
                out,
            },
        ),
    }
}

pub fn simulate(g: &GlobalArgs, config: Config, out: &Path) -> Result<(), CliError> {
    let mut sim = config.simulation;
    if let Some(s) = g.seed {
        sim.seed = s;
    }
    let bank = generate_bank(&sim).map_err(|e| CliError::Input(e.to_string()))?;
    let mut run = Run::new("simulate", out, to_value(&sim))?;
    run.seed = Some(sim.seed);
    if let Some(c) = &g.config {
        run.inputs.push(c);
    }
    let records: Vec<ResponseRecord> = (0..sim.n_concepts)
        .flat_map(|k| simulate_concept_records(&bank.truth, &sim, k))
        .collect();
    io::write_items(&run.path("items.jsonl"), &bank.items)?;
    io::write_responses(&run.path("responses.csv"), &records)?;
    io::write_json(&run.path("ground_truth.json"), &bank.truth)?;
    eprintln!(
        "simulated {} items, {} students, {} responses",
        bank.items.len(),
        bank.truth.students.len(),
        records.len()
    );
    run.finish()
}

pub fn calibrate(config: Config, items: &Path, responses: &Path, out: &Path) -> Result<(), CliError> {
    config.calibration.validate().map_err(|e| CliError::Input(e.to_string()))?;
    config.thresholds.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let bank = io::read_items(items)?;
    let records = io::read_responses(responses)?;
    let (matrices, dups) = io::group_responses(&bank, &records, responses)?;
    let outcomes = calibrate_concepts(&matrices, &config.calibration);

    let mut params = Vec::new();
    let mut exclusions = Vec::new();
    let mut fitted = 0;
    for o in outcomes {
        exclusions.extend(o.exclusions.entries);
        match o.fit {
            Ok(fit) => {
                fitted += 1;
                if !fit.converged {
                    eprintln!("warning: concept {} stopped after {} EM iterations", o.concept_id, fit.n_iterations);
                }
                params.extend(fit.item_params);
            }
            Err(CalibrationError::ConceptIneligible { .. }) => {}
            Err(e) => eprintln!("warning: {e}"),
        }
    }
    if fitted == 0 {
        return Err(CliError::Empty(format!("no eligible concept among {}", matrices.len())));
    }
    let (params, counts) = flag_items(params, &config.thresholds);

    let mut run = Run::new(
        "calibrate",
        out,
        serde_json::json!({ "calibration": config.calibration, "thresholds": config.thresholds }),
    )?;
    run.inputs.extend([items, responses]);
    io::write_params(&run.path("params.csv"), &params)?;
    io::write_exclusions(&run.path("exclusions.csv"), &exclusions)?;
    eprintln!(
        "calibrated {} items in {fitted}/{} concepts ({dups} duplicate responses dropped); {counts}",
        params.len(),
        matrices.len()
    );
    run.finish()
}

/// Blocking JSON-over-HTTP verifier client.
pub struct HttpVerifier {
    agent: ureq::Agent,
    url: String,
    key: Option<String>,
}

impl HttpVerifier {
    pub fn new(url: String, key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpVerifier { agent, url, key }
    }
}

impl Verifier for HttpVerifier {
    fn verify(&self, request: &VerifierRequest) -> Result<VerifierResponse, VerifierError> {
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_) => VerifierError::Timeout,
            e => VerifierError::Unreachable(e.to_string()),
        })?;
        let body = resp.body_mut().read_to_string().map_err(|e| VerifierError::Malformed(e.to_string()))?;
        parse_response(&body)
    }
}

/// The configured verifier, or `None` for offline mode. The endpoint comes
/// from the environment, falling back to the config file.
fn verifier_from_env(g: &GlobalArgs, config: &mut DetectorConfig) -> Option<HttpVerifier> {
    if g.offline || !config.verifier.enabled {
        config.verifier.enabled = false;
        return None;
    }
    let url = std::env::var(ENV_VERIFIER_URL).ok().filter(|s| !s.is_empty()).or(config.verifier.endpoint.clone());
    let Some(url) = url else {
        eprintln!("note: verifier enabled but {ENV_VERIFIER_URL} is unset; running offline");
        config.verifier.enabled = false;
        return None;
    };
    let key = std::env::var(ENV_VERIFIER_KEY).ok().filter(|s| !s.is_empty());
    Some(HttpVerifier::new(url, key, Duration::from_millis(config.verifier.timeout_ms)))
}

pub fn detect(g: &GlobalArgs, config: Config, items: &Path, out: &Path) -> Result<(), CliError> {
    let mut detector = config.detector;
    detector.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let bank = io::read_items(items)?;
    let verifier = verifier_from_env(g, &mut detector);
    let (annotations, summary) = detect_bank(&bank, &detector, verifier.as_ref().map(|v| v as &dyn Verifier));

    // endpoint and key never enter the manifest
    let mut snapshot = detector.clone();
    snapshot.verifier.endpoint = None;
    let mut run = Run::new("detect", out, to_value(&snapshot))?;
    run.inputs.push(items);
    io::write_flaws(&run.path("flaws.jsonl"), &annotations)?;
    io::write_json(&run.path("summary.json"), &summary)?;
    eprintln!(
        "annotated {} items: {} flaws, {:.3} per item",
        summary.n_items, summary.total_flaws, summary.flaws_per_item
    );
    run.finish()
}

fn parse_domains(filter: Option<&str>) -> Result<Option<BTreeSet<Domain>>, CliError> {
    let Some(f) = filter else { return Ok(None) };
    f.split(',')
        .map(|s| s.trim().parse::<Domain>().map_err(|_| CliError::Input(format!("unknown domain {s:?}"))))
        .collect::<Result<BTreeSet<_>, _>>()
        .map(Some)
}

/// Reads params and flaws, joins them, and applies the domain filter.
fn load_dataset(
    params: &Path,
    flaws: &Path,
    domain: Option<&str>,
) -> Result<(Vec<AnalysisTuple>, Vec<itemgauge_core::IwfAnnotation>, Vec<itemgauge_core::IrtItemParams>), CliError> {
    let domains = parse_domains(domain)?;
    let p = io::read_params(params)?;
    let a = io::read_flaws(flaws)?;
    let mut data = join_analysis_dataset(&p, &a);
    if let Some(d) = &domains {
        data.retain(|t| d.contains(&t.domain));
    }
    if data.is_empty() {
        return Err(CliError::Empty(format!(
            "no item appears in both {} and {}{}",
            params.display(),
            flaws.display(),
            if domains.is_some() { " within the domain filter" } else { "" }
        )));
    }
    Ok((data, a, p))
}

pub fn analyze(
    params: &Path,
    flaws: &Path,
    alpha: f64,
    domain: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let (data, annotations, item_params) = load_dataset(params, flaws, domain)?;
    let ids: BTreeSet<&str> = data.iter().map(|t| t.item_id.as_str()).collect();
    let kept: Vec<_> = annotations.into_iter().filter(|a| ids.contains(a.item_id.as_str())).collect();
    let mut counts = FlagCounts::default();
    for p in item_params.iter().filter(|p| ids.contains(p.item_id.as_str())) {
        counts.low_discrimination += p.flags.contains(&ItemFlag::LowDiscrimination) as usize;
        counts.low_difficulty += p.flags.contains(&ItemFlag::LowDifficulty) as usize;
        counts.high_difficulty += p.flags.contains(&ItemFlag::HighDifficulty) as usize;
    }
    let stats_err = |e: StatsError| match e {
        StatsError::InvalidArgument(m) => CliError::Input(m),
        e => CliError::Empty(e.to_string()),
    };
    let report = AnalysisReport {
        summary: ReportSummary { n_items: data.len(), flaws: summarize(&kept), item_flags: counts },
        rq1: rq1_analysis(&data, alpha).map_err(stats_err)?,
        rq2: rq2_analysis(&data, alpha).map_err(stats_err)?,
        rq3: None,
    };
    let mut run = Run::new("analyze", out, serde_json::json!({}))?;
    run.arg("alpha", alpha);
    if let Some(d) = domain {
        run.arg("domain", d);
    }
    run.inputs.extend([params, flaws]);
    io::write_json(&run.path("report.json"), &report)?;
    io::write_rq1_csv(&run.path("rq1.csv"), &report.rq1)?;
    io::write_rq2_csv(&run.path("rq2.csv"), &report.rq2)?;
    if let Some(row) = report.rq1.find(Parameter::Delta, Stratum::Pooled, CorrMethod::Pearson) {
        eprintln!(
            "{} items; pooled r(flaw count, delta) = {:.3} (p_adj = {:.3e})",
            data.len(),
            row.correlation.r,
            row.correlation.p_adjusted
        );
    }
    run.finish()
}

struct ScreenArgs<'a> {
    params: &'a Path,
    flaws: &'a Path,
    task: Target,
    grid: GridProfile,
    target_precision: f64,
    domain: Option<&'a str>,
    out: &'a Path,
}

fn screen(g: &GlobalArgs, config: Config, a: ScreenArgs<'_>) -> Result<(), CliError> {
    if !(a.target_precision > 0.0 && a.target_precision <= 1.0) {
        return Err(CliError::Input(format!("--target-precision must be in (0, 1], got {}", a.target_precision)));
    }
    let mut cv = config.cv;
    if let Some(s) = g.seed {
        cv.seed = s;
    }
    let (data, _, _) = load_dataset(a.params, a.flaws, a.domain)?;
    let screen_err = |e: ScreenError| match e {
        ScreenError::InsufficientClass { .. } | ScreenError::SingleClass | ScreenError::InsufficientData { .. } => {
            CliError::Infeasible(format!("task {}: {e}", a.task))
        }
        e => CliError::Input(e.to_string()),
    };
    let mut families = Vec::new();
    let mut best: Option<(ModelFamily, f64, Vec<f64>, Vec<f64>)> = None;
    for family in ModelFamily::for_target(a.task) {
        let specs = grid(family, a.grid);
        let r = cv_evaluate(&data, a.task, &config.thresholds, &specs, &cv).map_err(screen_err)?;
        if let (itemgauge_core::screen::MetricSet::Classification(m), true) = (r.metrics, family != ModelFamily::Baseline) {
            if best.as_ref().is_none_or(|b| m.auc > b.1) {
                best = Some((family, m.auc, r.oof_predictions.clone(), r.truth.clone()));
            }
        }
        eprintln!("{} {}: {}", a.task, family.as_str(), serde_json::to_string(&r.metrics).unwrap_or_default());
        families.push(io::FamilyResult { family, grid_size: specs.len(), cv: (&r).into() });
    }

    let mut run = Run::new("screen", a.out, serde_json::json!({ "cv": cv, "thresholds": config.thresholds }))?;
    run.seed = Some(cv.seed);
    run.arg("task", a.task);
    run.arg("grid", grid_name(a.grid));
    run.arg("target_precision", a.target_precision);
    if let Some(d) = a.domain {
        run.arg("domain", d);
    }
    run.inputs.extend([a.params, a.flaws]);

    let mut threshold = None;
    if let Some((family, _, scores, truth)) = best {
        let labels: Vec<bool> = truth.iter().map(|&v| v > 0.5).collect();
        let curve = pr_curve(&scores, &labels).map_err(screen_err)?;
        io::write_pr_curve(&run.path("pr_curve.csv"), &curve)?;
        let (point, diagnostic) = match select_threshold(&curve, a.target_precision) {
            Ok(p) => (Some(p), None),
            Err(e) => {
                eprintln!("note: {e}");
                (None, Some(e.to_string()))
            }
        };
        if let Some(p) = &point {
            eprintln!(
                "{}: threshold {:.4} gives precision {:.3}, recall {:.3}",
                family.as_str(),
                p.threshold,
                p.precision,
                p.recall
            );
        }
        threshold = Some(io::ThresholdChoice { family, target_precision: a.target_precision, point, diagnostic });
    }
    let report = ScreenReport {
        task: a.task,
        grid: grid_name(a.grid).to_string(),
        seed: cv.seed,
        n_items: data.len(),
        families,
        threshold,
    };
    io::write_json(&run.path("metrics.json"), &report)?;
    run.finish()
}

fn grid_name(g: GridProfile) -> &'static str {
    match g {
        GridProfile::Small => "small",
        GridProfile::Paper => "paper",
    }
}
