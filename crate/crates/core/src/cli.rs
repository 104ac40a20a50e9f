//! Command-line front end.
//!
//! Every subcommand resolves its options from flags layered over an
//! optional JSON config file, writes outputs atomically, and records a
//! manifest next to them. Passing that manifest back as `--config`
//! reruns the same command.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{self, Correlation, EvalReport};
use crate::automl::{self, AutomlConfig, F1Grid, SearchSpace};
use crate::domain::ValidationPolicy;
use crate::domain::{
    AcsRecord, BlockGroupId, BlockId, DacRecord, IncomeBins, IndicatorManifest, LodesKind, LodesRecord,
    TractId,
};
use crate::error::Error;
use crate::features::{self, build_variant, FeatureMatrix, SplitConfig, Variant, VariantSources};
use crate::ingest::{self, ColumnMap, ReadOptions, SourceKind};
use crate::models::{self, io as model_io, Family, ModelSpec, TrainedModel};
use crate::report::{self, ReportInputs};
use crate::scoring;
use crate::synth::{self, SynthConfig};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "dacml",
    version,
    about = "Disadvantaged-community classification from census data"
)]
struct Cli {
    /// JSON config file or a manifest from an earlier run; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse raw LODES, ACS and DAC files into validated tract-level tables.
    Ingest(IngestArgs),
    /// Compute indicator percentiles and DAC scores.
    Score(ScoreArgs),
    /// Build feature-variant matrices from ingested tables.
    Features(FeaturesArgs),
    /// Train one model on the training split of a matrix.
    Train(TrainArgs),
    /// Grid search over model families and feature variants.
    Automl(AutomlArgs),
    /// Score a model on held-out (or all) labeled rows.
    Evaluate(EvaluateArgs),
    /// Rank a model's features.
    Importance(ImportanceArgs),
    /// Explain false positives and false negatives with indicator percentiles.
    Diagnose(DiagnoseArgs),
    /// Apply a model to other years.
    Infer(InferArgs),
    /// Correlate yearly DAC counts with feature trends.
    Trend(TrendArgs),
    /// Generate a synthetic corpus in the raw input formats.
    Synth(SynthArgs),
    /// Assemble a markdown report from earlier outputs.
    Report(ReportArgs),
    /// Write per-tract predictions of a model.
    Predict(PredictArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Score(_) => "score",
            Command::Features(_) => "features",
            Command::Train(_) => "train",
            Command::Automl(_) => "automl",
            Command::Evaluate(_) => "evaluate",
            Command::Importance(_) => "importance",
            Command::Diagnose(_) => "diagnose",
            Command::Infer(_) => "infer",
            Command::Trend(_) => "trend",
            Command::Synth(_) => "synth",
            Command::Report(_) => "report",
            Command::Predict(_) => "predict",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IngestArgs {
    /// LODES residence-area files (block or tract level, optionally gzipped).
    #[arg(long, num_args = 1..)]
    rac: Vec<PathBuf>,
    /// LODES workplace-area files.
    #[arg(long, num_args = 1..)]
    wac: Vec<PathBuf>,
    /// ACS household-income files (block-group or tract level).
    #[arg(long, num_args = 1..)]
    acs: Vec<PathBuf>,
    /// DAC indicator file.
    #[arg(long)]
    dac: Option<PathBuf>,
    /// Data year, used in output file names.
    #[arg(long)]
    year: Option<u16>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Column maps (`field = column` lines) for releases with other codes.
    #[arg(long)]
    rac_map: Option<PathBuf>,
    #[arg(long)]
    wac_map: Option<PathBuf>,
    #[arg(long)]
    acs_map: Option<PathBuf>,
    #[arg(long)]
    dac_map: Option<PathBuf>,
    /// Indicator manifest, one name per line.
    #[arg(long)]
    indicators: Option<PathBuf>,
    /// Income bin lower edges, one per line.
    #[arg(long)]
    income_bins: Option<PathBuf>,
    /// Treat bin-sum mismatches as errors.
    #[arg(long)]
    strict_sums: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScoreArgs {
    /// Canonical DAC file from `ingest`.
    #[arg(long)]
    dac: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the DAC vs non-DAC indicator separation ranking.
    #[arg(long)]
    separation: Option<PathBuf>,
    #[arg(long)]
    indicators: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FeaturesArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    year: Option<u16>,
    /// Variants to build (v1a v1b v1c v2a v2b); all when omitted.
    #[arg(long, num_args = 1..)]
    variant: Vec<String>,
    /// Label file; defaults to the ingested DAC file of the year when present.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Build unlabeled matrices even when a DAC file exists.
    #[arg(long)]
    unlabeled: bool,
    #[arg(long)]
    income_bins: Option<PathBuf>,
    #[arg(long)]
    indicators: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitArgs {
    /// Training share of the rows.
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Plain random split instead of a class-stratified one.
    #[arg(long)]
    no_stratify: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    /// Labeled feature matrix.
    #[arg(long)]
    features: Option<PathBuf>,
    /// GBM, XGBoost, DRF, XRT, GLM or DeepLearning.
    #[arg(long)]
    family: Option<String>,
    /// Hyperparameter as name=value; repeatable.
    #[arg(long = "param", num_args = 1..)]
    params: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AutomlArgs {
    /// Labeled feature matrices, one per variant.
    #[arg(long, num_args = 1..)]
    features: Vec<PathBuf>,
    /// Search-space file; the bundled grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    /// Comma-separated families to search.
    #[arg(long)]
    families: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// The labeled matrix the model was trained from.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Use every row rather than the model's held-out split.
    #[arg(long)]
    all_rows: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ImportanceArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Keep only the top k features.
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DiagnoseArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// DAC file, raw or scored.
    #[arg(long)]
    dac: Option<PathBuf>,
    #[arg(long)]
    indicators: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    all_rows: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Matrices as YEAR=PATH, or paths ending in _YEAR.csv.
    #[arg(long, num_args = 1..)]
    features: Vec<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Tract geometries to annotate, one GeoJSON per year.
    #[arg(long)]
    geojson: Option<PathBuf>,
    /// Feature property holding the tract id.
    #[arg(long)]
    geoid_property: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrendArgs {
    /// `counts.csv` written by `infer`.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Matrices as YEAR=PATH, or paths ending in _YEAR.csv.
    #[arg(long, num_args = 1..)]
    features: Vec<String>,
    /// Importance CSV whose top features are tracked.
    #[arg(long)]
    importance: Option<PathBuf>,
    #[arg(long)]
    top: Option<usize>,
    /// Comma-separated features to track instead.
    #[arg(long)]
    select: Option<String>,
    /// Ingest directory whose ACS tables provide population weights.
    #[arg(long)]
    population: Option<PathBuf>,
    /// Plain means instead of population-weighted ones.
    #[arg(long)]
    unweighted: bool,
    /// pearson or spearman.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    income_bins: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tracts: Option<usize>,
    /// Labeled year.
    #[arg(long)]
    year: Option<u16>,
    /// History years as FIRST-LAST or a comma list.
    #[arg(long)]
    history: Option<String>,
    /// Workplace composition independent of residents.
    #[arg(long)]
    residence_driven: bool,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    dac_fraction: Option<f64>,
    #[arg(long)]
    housing_fraction: Option<f64>,
    #[arg(long)]
    wac_coupling: Option<f64>,
    #[arg(long)]
    income_drift: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReportArgs {
    /// F1 grid CSV written by `automl`.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Directory to collect grid, importance, diagnostics, counts and trend CSVs from.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    importance: Vec<PathBuf>,
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long)]
    trend: Option<PathBuf>,
    /// Rows per ranked table.
    #[arg(long)]
    top: Option<usize>,
    /// Markdown file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct Globals {
    seed: Option<u64>,
    workers: Option<usize>,
}

/// Record of one run: resolved options plus digests of everything read
/// and written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_err = |source| Error::File {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(&dir).map_err(file_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(file_err)?;
    tmp.write_all(bytes).map_err(file_err)?;
    tmp.as_file().sync_all().map_err(file_err)?;
    tmp.persist(path).map_err(|e| file_err(e.error))?;
    Ok(())
}

/// Tracks inputs and outputs of a run.
struct Ctx {
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Ctx {
    fn new() -> Self {
        Self {
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn read_bytes(&mut self, path: &Path) -> crate::Result<Vec<u8>> {
        let raw = fs::read(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&raw));
        if raw.starts_with(&[0x1f, 0x8b]) {
            let mut out = Vec::new();
            flate2::read::MultiGzDecoder::new(raw.as_slice())
                .read_to_end(&mut out)
                .map_err(|source| Error::File {
                    path: path.to_path_buf(),
                    source,
                })?;
            Ok(out)
        } else {
            Ok(raw)
        }
    }

    fn read_text(&mut self, path: &Path) -> crate::Result<String> {
        let b = self.read_bytes(path)?;
        String::from_utf8(b).map_err(|_| Error::File {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, "not UTF-8"),
        })
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> crate::Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn write_with(
        &mut self,
        path: &Path,
        f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>,
    ) -> crate::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(path, &buf)
    }

    fn load_model(&mut self, path: &Path) -> crate::Result<TrainedModel> {
        let text = self.read_text(path)?;
        model_io::from_text(&text).map_err(|e| match e {
            Error::ModelFormat(m) => Error::ModelFormat(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn load_matrix(&mut self, path: &Path, year: Option<u16>) -> crate::Result<FeatureMatrix> {
        let bytes = self.read_bytes(path)?;
        let year = year.or_else(|| year_from_path(path)).unwrap_or(0);
        FeatureMatrix::read_csv(bytes.as_slice(), None, year)
    }
}

fn year_from_path(path: &Path) -> Option<u16> {
    let stem = path.file_stem()?.to_str()?;
    let tail = stem.rsplit(['_', '-']).next()?;
    (tail.len() == 4).then(|| tail.parse().ok()).flatten()
}

fn year_path(spec: &str) -> CliResult<(u16, PathBuf)> {
    if let Some((y, p)) = spec.split_once('=') {
        let y = y
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad year in {spec:?}")))?;
        return Ok((y, PathBuf::from(p)));
    }
    let p = PathBuf::from(spec);
    let y = year_from_path(&p)
        .ok_or_else(|| usage(format!("cannot tell the year of {spec:?}; use YEAR=PATH")))?;
    Ok((y, p))
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone()
        .ok_or_else(|| usage(format!("missing required option --{flag}")))
}

/// Overlay non-empty flag values onto the config file section.
fn merge<T: Serialize + DeserializeOwned>(cli: &T, file: Option<&Value>) -> CliResult<T> {
    let mut base = match file {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(usage("config must be a JSON object")),
        None => serde_json::Map::new(),
    };
    let Value::Object(flags) = serde_json::to_value(cli).map_err(|e| usage(e.to_string()))? else {
        unreachable!("argument structs serialize to objects");
    };
    for (k, v) in flags {
        let empty = match &v {
            Value::Null | Value::Bool(false) => true,
            Value::Array(a) => a.is_empty(),
            _ => false,
        };
        if !empty {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| usage(format!("config: {e}")))
}

/// The section of a config file that applies to `subcommand`.
fn config_section(file: &Value, subcommand: &str) -> CliResult<Value> {
    let Value::Object(m) = file else {
        return Err(usage("config must be a JSON object"));
    };
    if let (Some(Value::String(s)), Some(cfg)) = (m.get("subcommand"), m.get("config")) {
        if s != subcommand {
            return Err(usage(format!("manifest is for `{s}`, not `{subcommand}`")));
        }
        return Ok(cfg.clone());
    }
    if let Some(sec) = m.get(subcommand) {
        let mut sec = sec.clone();
        if let Value::Object(s) = &mut sec {
            for k in ["seed", "workers"] {
                if let (Some(v), false) = (m.get(k), s.contains_key(k)) {
                    s.insert(k.to_string(), v.clone());
                }
            }
        }
        return Ok(sec);
    }
    Ok(file.clone())
}

/// Split a config section into globals and subcommand keys.
fn split_globals(section: Option<Value>) -> (Globals, Option<Value>) {
    match section {
        Some(Value::Object(mut m)) => {
            let g = Globals {
                seed: m.remove("seed").and_then(|v| v.as_u64()),
                workers: m.remove("workers").and_then(|v| v.as_u64()).map(|w| w as usize),
            };
            (g, Some(Value::Object(m)))
        }
        other => (Globals::default(), other),
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("DACML_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Run the CLI; returns the process exit code (0 ok, 1 data error, 2 usage).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("\nFor more information, try '--help'.");
            2
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let name = cli.command.name();
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| {
                CliError::Data(Error::File {
                    path: p.clone(),
                    source,
                })
            })?;
            let v: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Some(config_section(&v, name)?)
        }
        None => None,
    };
    let (file_globals, section) = split_globals(file);
    let seed = cli.seed.or(file_globals.seed).unwrap_or(0);
    let workers = cli.workers.or(file_globals.workers).unwrap_or(0);
    let pool = automl::pool(workers)?;
    let section = section.as_ref();
    let mut ctx = Ctx::new();

    macro_rules! go {
        ($args:expr, $f:path) => {{
            let a = merge($args, section)?;
            let out = pool.install(|| $f(&mut ctx, &a, seed))?;
            let mut config = serde_json::to_value(&a).map_err(|e| usage(e.to_string()))?;
            if let Value::Object(m) = &mut config {
                m.insert("seed".into(), json!(seed));
                m.insert("workers".into(), json!(workers));
            }
            (config, out)
        }};
    }
    let (config, manifest_path) = match &cli.command {
        Command::Ingest(a) => go!(a, cmd_ingest),
        Command::Score(a) => go!(a, cmd_score),
        Command::Features(a) => go!(a, cmd_features),
        Command::Train(a) => go!(a, cmd_train),
        Command::Automl(a) => go!(a, cmd_automl),
        Command::Evaluate(a) => go!(a, cmd_evaluate),
        Command::Importance(a) => go!(a, cmd_importance),
        Command::Diagnose(a) => go!(a, cmd_diagnose),
        Command::Infer(a) => go!(a, cmd_infer),
        Command::Trend(a) => go!(a, cmd_trend),
        Command::Synth(a) => go!(a, cmd_synth),
        Command::Report(a) => go!(a, cmd_report),
        Command::Predict(a) => go!(a, cmd_predict),
    };
    if let Some(path) = manifest_path {
        let manifest = RunManifest {
            subcommand: name.to_string(),
            config,
            inputs: std::mem::take(&mut ctx.inputs),
            outputs: std::mem::take(&mut ctx.outputs),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let mut text = serde_json::to_string_pretty(&serde_json::to_value(&manifest).map_err(Error::from)?)
            .map_err(Error::from)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
    }
    Ok(())
}

/// Manifest location for a directory or a single-file output.
fn manifest_for(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(MANIFEST_NAME)
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

fn load_manifest(ctx: &mut Ctx, path: &Option<PathBuf>) -> crate::Result<IndicatorManifest> {
    match path {
        Some(p) => IndicatorManifest::parse(&ctx.read_text(p)?),
        None => Ok(IndicatorManifest::bundled()),
    }
}

fn load_bins(ctx: &mut Ctx, path: &Option<PathBuf>) -> crate::Result<IncomeBins> {
    match path {
        Some(p) => IncomeBins::parse(&ctx.read_text(p)?),
        None => Ok(IncomeBins::bundled()),
    }
}

fn load_map(
    ctx: &mut Ctx,
    path: &Option<PathBuf>,
    kind: SourceKind,
    default: ColumnMap,
) -> crate::Result<ColumnMap> {
    match path {
        Some(p) => ColumnMap::parse(kind, &ctx.read_text(p)?),
        None => Ok(default),
    }
}

fn warn_rows(path: &Path, warnings: &[ingest::RowWarning]) {
    if !warnings.is_empty() {
        log::warn!("{}: {} rows with warnings", path.display(), warnings.len());
        for w in warnings.iter().take(5) {
            log::warn!("  line {}: {}", w.line, w.violation);
        }
    }
}

/// Parse block-level LODES and aggregate, or fall back to tract level.
fn read_lodes(
    ctx: &mut Ctx,
    paths: &[PathBuf],
    kind: LodesKind,
    map: &ColumnMap,
    opts: &ReadOptions,
) -> crate::Result<Vec<LodesRecord<TractId>>> {
    let mut blocks = Vec::new();
    let mut tracts = Vec::new();
    for p in paths {
        let bytes = ctx.read_bytes(p)?;
        match ingest::parse_lodes::<BlockId, _>(bytes.as_slice(), map, kind, opts) {
            Ok(parsed) => {
                warn_rows(p, &parsed.warnings);
                blocks.extend(parsed.records);
            }
            Err(block_err) => match ingest::parse_lodes::<TractId, _>(bytes.as_slice(), map, kind, opts) {
                Ok(parsed) => {
                    warn_rows(p, &parsed.warnings);
                    tracts.extend(parsed.records);
                }
                Err(_) => return Err(with_path(p, block_err)),
            },
        }
    }
    tracts.extend(ingest::aggregate_to_tract(&blocks));
    Ok(ingest::aggregate_to_tract(&tracts))
}

fn read_acs(
    ctx: &mut Ctx,
    paths: &[PathBuf],
    map: &ColumnMap,
    bins: &IncomeBins,
    opts: &ReadOptions,
) -> crate::Result<Vec<AcsRecord<TractId>>> {
    let mut groups = Vec::new();
    let mut tracts = Vec::new();
    for p in paths {
        let bytes = ctx.read_bytes(p)?;
        match ingest::parse_acs::<BlockGroupId, _>(bytes.as_slice(), map, bins, opts) {
            Ok(parsed) => {
                warn_rows(p, &parsed.warnings);
                groups.extend(parsed.records);
            }
            Err(bg_err) => match ingest::parse_acs::<TractId, _>(bytes.as_slice(), map, bins, opts) {
                Ok(parsed) => {
                    warn_rows(p, &parsed.warnings);
                    tracts.extend(parsed.records);
                }
                Err(_) => return Err(with_path(p, bg_err)),
            },
        }
    }
    tracts.extend(ingest::aggregate_to_tract(&groups));
    Ok(ingest::aggregate_to_tract(&tracts))
}

fn with_path(p: &Path, e: Error) -> Error {
    Error::Schema(format!("{}: {e}", p.display()))
}

fn cmd_ingest(ctx: &mut Ctx, a: &IngestArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let year = required(&a.year, "year")?;
    if a.rac.is_empty() && a.wac.is_empty() && a.acs.is_empty() && a.dac.is_none() {
        return Err(usage("nothing to ingest; pass --rac, --wac, --acs or --dac"));
    }
    let opts = ReadOptions {
        delimiter: None,
        policy: ValidationPolicy {
            strict_sums: a.strict_sums,
        },
    };
    let manifest = load_manifest(ctx, &a.indicators)?;
    let bins = load_bins(ctx, &a.income_bins)?;
    for (paths, kind, map_path) in [
        (&a.rac, LodesKind::Rac, &a.rac_map),
        (&a.wac, LodesKind::Wac, &a.wac_map),
    ] {
        if paths.is_empty() {
            continue;
        }
        let map = load_map(
            ctx,
            map_path,
            SourceKind::lodes(kind),
            ColumnMap::default_lodes(kind),
        )?;
        let recs = read_lodes(ctx, paths, kind, &map, &opts)?;
        log::info!("{kind}: {} tracts", recs.len());
        ctx.write_with(&out.join(format!("{}_{year}.csv", kind.prefix())), |b| {
            ingest::write_lodes(&recs, kind, &ingest::canonical_lodes_map(kind), b)
        })?;
    }
    if !a.acs.is_empty() {
        let map = load_map(ctx, &a.acs_map, SourceKind::Acs, ColumnMap::default_acs(&bins))?;
        let recs = read_acs(ctx, &a.acs, &map, &bins, &opts)?;
        log::info!("ACS: {} tracts", recs.len());
        ctx.write_with(&out.join(format!("acs_{year}.csv")), |b| {
            ingest::write_acs(&recs, &bins, &ingest::canonical_acs_map(&bins), b)
        })?;
    }
    if let Some(p) = &a.dac {
        let map = load_map(
            ctx,
            &a.dac_map,
            SourceKind::Dac,
            ColumnMap::default_dac(&manifest),
        )?;
        let bytes = ctx.read_bytes(p)?;
        let parsed =
            ingest::parse_dac(bytes.as_slice(), &map, &manifest, &opts).map_err(|e| with_path(p, e))?;
        warn_rows(p, &parsed.warnings);
        let mut recs = parsed.records;
        recs.sort_by(|x, y| x.tract.cmp(&y.tract));
        log::info!(
            "DAC: {} tracts, {} flagged",
            recs.len(),
            recs.iter().filter(|r| r.dac).count()
        );
        ctx.write_with(&out.join(format!("dac_{year}.csv")), |b| {
            ingest::write_dac(&recs, &manifest, &ingest::canonical_dac_map(&manifest), b)
        })?;
    }
    Ok(Some(manifest_for(&out, true)))
}

fn read_dac(ctx: &mut Ctx, path: &Path, manifest: &IndicatorManifest) -> crate::Result<Vec<DacRecord>> {
    let bytes = ctx.read_bytes(path)?;
    let parsed = ingest::parse_dac(
        bytes.as_slice(),
        &ingest::canonical_dac_map(manifest),
        manifest,
        &ReadOptions::default(),
    )
    .map_err(|e| with_path(path, e))?;
    Ok(parsed.records)
}

fn cmd_score(ctx: &mut Ctx, a: &ScoreArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let dac_path = required(&a.dac, "dac")?;
    let out = required(&a.out, "out")?;
    let manifest = load_manifest(ctx, &a.indicators)?;
    let mut recs = read_dac(ctx, &dac_path, &manifest)?;
    scoring::assign_percentiles(&mut recs)?;
    let mut incomplete = 0;
    for r in &mut recs {
        match scoring::dac_score(&r.indicators) {
            Ok(s) => r.score = Some(s),
            Err(_) => {
                r.score = None;
                incomplete += 1;
            }
        }
    }
    if incomplete > 0 {
        log::warn!("{incomplete} tracts have missing indicators and no score");
    }
    ctx.write_with(&out, |b| {
        ingest::write_dac(&recs, &manifest, &ingest::canonical_dac_map(&manifest), b)
    })?;
    if let Some(sep) = &a.separation {
        let report = scoring::rank_separation(&recs)?;
        ctx.write_with(sep, |b| report.write_csv(b))?;
    }
    Ok(Some(manifest_for(&out, false)))
}

fn parse_variants(list: &[String]) -> CliResult<Vec<Variant>> {
    if list.is_empty() {
        return Ok(Variant::ALL.to_vec());
    }
    list.iter()
        .flat_map(|s| s.split(','))
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Variant>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn cmd_features(ctx: &mut Ctx, a: &FeaturesArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let input = required(&a.input, "input")?;
    let year = required(&a.year, "year")?;
    let out = required(&a.out, "out")?;
    let variants = parse_variants(&a.variant)?;
    let bins = load_bins(ctx, &a.income_bins)?;
    let manifest = load_manifest(ctx, &a.indicators)?;
    let mut load = |kind: LodesKind| -> crate::Result<Vec<LodesRecord<TractId>>> {
        let p = input.join(format!("{}_{year}.csv", kind.prefix()));
        if !p.exists() {
            return Ok(Vec::new());
        }
        let bytes = ctx.read_bytes(&p)?;
        Ok(ingest::parse_lodes(
            bytes.as_slice(),
            &ingest::canonical_lodes_map(kind),
            kind,
            &ReadOptions::default(),
        )?
        .records)
    };
    let rac = load(LodesKind::Rac)?;
    let wac = load(LodesKind::Wac)?;
    let acs_path = input.join(format!("acs_{year}.csv"));
    let acs = if acs_path.exists() {
        let bytes = ctx.read_bytes(&acs_path)?;
        ingest::parse_acs(
            bytes.as_slice(),
            &ingest::canonical_acs_map(&bins),
            &bins,
            &ReadOptions::default(),
        )?
        .records
    } else {
        Vec::new()
    };
    let label_path = a.labels.clone().or_else(|| {
        let p = input.join(format!("dac_{year}.csv"));
        (!a.unlabeled && p.exists()).then_some(p)
    });
    let labels: Option<BTreeMap<TractId, bool>> = match &label_path {
        Some(p) => Some(
            read_dac(ctx, p, &manifest)?
                .into_iter()
                .map(|r| (r.tract, r.dac))
                .collect(),
        ),
        None => None,
    };
    for v in variants {
        let sources = VariantSources {
            rac: &rac,
            wac: &wac,
            acs: &acs,
            bins: &bins,
            labels: labels.as_ref(),
        };
        let (m, drops) = build_variant(v, &sources, year)?;
        if m.n_rows() == 0 {
            return Err(Error::invalid(format!("{v}: no tract has every required source for {year}")).into());
        }
        log::info!(
            "{v}: {} tracts x {} features ({} unmatched, {} zero denominators)",
            m.n_rows(),
            m.n_features(),
            drops.unmatched,
            drops.zero_denominator
        );
        ctx.write_with(&out.join(format!("features_{}_{year}.csv", v.code())), |b| {
            m.write_csv(b)
        })?;
    }
    Ok(Some(manifest_for(&out, true)))
}

fn split_config(s: &SplitArgs, seed: u64) -> CliResult<SplitConfig> {
    let ratio = s.split_ratio.unwrap_or(SplitConfig::default().ratio);
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(usage(format!("--split-ratio must lie in (0, 1), got {ratio}")));
    }
    Ok(SplitConfig {
        ratio,
        seed: crate::seed::derive(seed, crate::seed::stream::SPLIT),
        stratify: !s.no_stratify,
    })
}

fn threshold(t: Option<f64>) -> CliResult<f64> {
    let t = t.unwrap_or(models::DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&t) {
        return Err(usage(format!("--threshold must lie in [0, 1], got {t}")));
    }
    Ok(t)
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs, seed: u64) -> CliResult<Option<PathBuf>> {
    let path = required(&a.features, "features")?;
    let out = required(&a.out, "out")?;
    let family: Family = required(&a.family, "family")?
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let mut spec = ModelSpec::new(family, crate::seed::derive(seed, crate::seed::stream::SPEC));
    for p in &a.params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| usage(format!("--param expects name=value, got {p:?}")))?;
        spec.set_str(k.trim(), v.trim())
            .map_err(|e| usage(e.to_string()))?;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = split_config(&a.split, seed)?;
    let m = ctx.load_matrix(&path, None)?;
    let (train_raw, test_raw) = features::split(&m, &cfg)?;
    let (train, test, stats) = features::standardize(&train_raw, &test_raw)?;
    let mut model = models::train(&spec, &train)?.with_stats(stats)?;
    model.meta.split = Some(cfg);
    for w in &model.meta.warnings {
        log::warn!("{w}");
    }
    let probs = model.predict_proba(&test)?;
    let labels = test.require_labels("evaluation")?;
    let c = analysis::Confusion::from_pairs(
        probs
            .iter()
            .map(|&p| p >= models::DEFAULT_THRESHOLD)
            .zip(labels.iter().copied()),
    );
    log::info!(
        "{family}: held-out F1 {:.4}, accuracy {:.4}",
        c.f1(),
        c.accuracy()
    );
    ctx.write(&out, model_io::to_text(&model).as_bytes())?;
    Ok(Some(manifest_for(&out, false)))
}

fn parse_families(s: &str) -> CliResult<Vec<Family>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<Family>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn cmd_automl(ctx: &mut Ctx, a: &AutomlArgs, seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    if a.features.is_empty() {
        return Err(usage("missing required option --features"));
    }
    let mut space = match &a.grid {
        Some(p) => SearchSpace::parse(&ctx.read_text(p)?).map_err(|e| with_path(p, e))?,
        None => SearchSpace::bundled(),
    };
    if let Some(f) = &a.families {
        space = space.restrict(&parse_families(f)?)?;
    }
    if let Some(b) = a.budget {
        space = space.with_budget(b).map_err(|e| usage(e.to_string()))?;
    }
    let cfg = AutomlConfig {
        split: split_config(&a.split, seed)?,
        seed,
        threshold: threshold(a.threshold)?,
    };
    let mut matrices = Vec::new();
    for p in &a.features {
        let m = ctx.load_matrix(p, None)?;
        if matrices.iter().any(|x: &FeatureMatrix| x.variant == m.variant) {
            return Err(usage(format!("variant {} given twice", m.variant)));
        }
        matrices.push(m);
    }
    let results = automl::run_automl(&matrices, &space, &cfg)?;
    let boards: Vec<&automl::Leaderboard> = results.iter().map(|r| &r.leaderboard).collect();
    ctx.write_with(&out.join("leaderboard.csv"), |b| {
        automl::write_leaderboards(&boards, b)
    })?;
    let grid = automl::best_per_cell(&boards);
    ctx.write_with(&out.join("grid.csv"), |b| grid.write_csv(b))?;
    for r in &results {
        let mut model = r.retrain_best(cfg.split)?;
        model.meta.year = Some(r.train.year);
        ctx.write(
            &out.join(format!("model_{}.txt", r.leaderboard.variant.code())),
            model_io::to_text(&model).as_bytes(),
        )?;
        if let Some(best) = r.leaderboard.best() {
            log::info!(
                "{}: best {} F1 {:.4} ({})",
                r.leaderboard.variant.label(),
                best.spec.family,
                best.f1.unwrap_or(0.0),
                best.spec.describe()
            );
        }
    }
    let text = report::emit_report(
        &ReportInputs {
            grid: Some(grid),
            ..Default::default()
        },
        10,
    );
    ctx.write(&out.join("report.md"), text.as_bytes())?;
    Ok(Some(manifest_for(&out, true)))
}

/// Held-out rows of the matrix a model was trained on, or every row.
fn evaluation_rows(model: &TrainedModel, m: &FeatureMatrix, all_rows: bool) -> crate::Result<FeatureMatrix> {
    let labels = m.require_labels("evaluation")?;
    match (&model.meta.split, all_rows) {
        (Some(cfg), false) => {
            let idx = features::split_indices(labels, cfg)?;
            if idx.train.len() != model.meta.n_train && model.meta.n_train != 0 {
                log::warn!(
                    "split gives {} training rows but the model saw {}; is this the training matrix?",
                    idx.train.len(),
                    model.meta.n_train
                );
            }
            Ok(m.select_rows(&idx.test))
        }
        _ => Ok(m.clone()),
    }
}

fn evaluate_model(model: &TrainedModel, rows: &FeatureMatrix, t: f64) -> crate::Result<EvalReport> {
    let std = model.standardize(rows)?;
    let preds = models::predict(model, &std, t)?;
    let labels: BTreeMap<TractId, bool> = rows
        .tracts()
        .iter()
        .cloned()
        .zip(rows.require_labels("evaluation")?.iter().copied())
        .collect();
    analysis::evaluate(&preds, &labels)
}

fn cmd_evaluate(ctx: &mut Ctx, a: &EvaluateArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let model = ctx.load_model(&required(&a.model, "model")?)?;
    let m = ctx.load_matrix(&required(&a.features, "features")?, None)?;
    let rows = evaluation_rows(&model, &m, a.all_rows)?;
    let eval = evaluate_model(&model, &rows, threshold(a.threshold)?)?;
    log::info!(
        "precision {:.4} recall {:.4} F1 {:.4} accuracy {:.4}",
        eval.precision,
        eval.recall,
        eval.f1,
        eval.accuracy
    );
    ctx.write_with(&out.join("metrics.csv"), |b| eval.write_metrics_csv(b))?;
    ctx.write_with(&out.join("outcomes.csv"), |b| eval.write_outcomes_csv(b))?;
    Ok(Some(manifest_for(&out, true)))
}

fn cmd_importance(ctx: &mut Ctx, a: &ImportanceArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let model = ctx.load_model(&required(&a.model, "model")?)?;
    let mut rep = model.feature_importance();
    if let Some(k) = a.top {
        let keep = rep.top(k);
        rep.entries.retain(|e| keep.contains(&e.feature));
    }
    ctx.write_with(&out, |b| rep.write_csv(b))?;
    Ok(Some(manifest_for(&out, false)))
}

fn cmd_diagnose(ctx: &mut Ctx, a: &DiagnoseArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let model = ctx.load_model(&required(&a.model, "model")?)?;
    let m = ctx.load_matrix(&required(&a.features, "features")?, None)?;
    let manifest = load_manifest(ctx, &a.indicators)?;
    let dac = read_dac(ctx, &required(&a.dac, "dac")?, &manifest)?;
    let rows = evaluation_rows(&model, &m, a.all_rows)?;
    let eval = evaluate_model(&model, &rows, threshold(a.threshold)?)?;
    let diag = analysis::diagnose_errors(&eval, &dac)?;
    for g in &diag.groups {
        let top: Vec<&str> = g.entries.iter().take(3).map(|e| e.indicator.as_str()).collect();
        log::info!(
            "{}: {} tracts, leading indicators {}",
            g.outcome.code(),
            g.n_tracts,
            top.join(", ")
        );
    }
    ctx.write_with(&out.join("rankings.csv"), |b| diag.write_rankings_csv(b))?;
    ctx.write_with(&out.join("tracts.csv"), |b| diag.write_tracts_csv(b))?;
    Ok(Some(manifest_for(&out, true)))
}

fn load_yearly(ctx: &mut Ctx, specs: &[String]) -> CliResult<BTreeMap<u16, FeatureMatrix>> {
    let mut out = BTreeMap::new();
    for s in specs {
        let (y, p) = year_path(s)?;
        let m = ctx.load_matrix(&p, Some(y))?;
        if out.insert(y, m).is_some() {
            return Err(usage(format!("year {y} given twice")));
        }
    }
    Ok(out)
}

fn annotate_geojson(
    geo: &Value,
    prop: &str,
    year: u16,
    preds: &[models::Prediction],
) -> crate::Result<Value> {
    let by_tract: BTreeMap<&str, &models::Prediction> = preds.iter().map(|p| (p.tract.as_str(), p)).collect();
    let mut geo = geo.clone();
    let features = geo
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| Error::Schema("GeoJSON must be a FeatureCollection".into()))?;
    for f in features {
        let id = f
            .get("properties")
            .and_then(|p| p.get(prop))
            .and_then(Value::as_str)
            .map(str::to_string);
        let Some(p) = id.as_deref().and_then(|id| by_tract.get(id)) else {
            continue;
        };
        if let Some(Value::Object(props)) = f.get_mut("properties") {
            props.insert("dac_pred".into(), json!(p.dac));
            props.insert("dac_prob".into(), json!(p.probability));
            props.insert("year".into(), json!(year));
        }
    }
    Ok(geo)
}

fn write_predictions<W: Write>(preds: &[models::Prediction], out: W) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tract_id", "probability", "dac"])?;
    for p in preds {
        w.write_record([
            p.tract.as_str(),
            &models::fmt_f64(p.probability),
            if p.dac { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_infer(ctx: &mut Ctx, a: &InferArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let model = ctx.load_model(&required(&a.model, "model")?)?;
    let t = threshold(a.threshold)?;
    let raw = load_yearly(ctx, &a.features)?;
    let mut yearly = BTreeMap::new();
    for (y, m) in &raw {
        let s = model.standardize(m).map_err(|e| match e {
            Error::FeatureMismatch(msg) => Error::FeatureMismatch(format!("year {y}: {msg}")),
            other => other,
        })?;
        yearly.insert(*y, s);
    }
    let results = analysis::infer_years(&model, &yearly, t)?;
    let geo: Option<Value> = match &a.geojson {
        Some(p) => Some(serde_json::from_slice(&ctx.read_bytes(p)?).map_err(Error::from)?),
        None => None,
    };
    let prop = a.geoid_property.clone().unwrap_or_else(|| "GEOID".to_string());
    let mut counts = Vec::new();
    for (y, r) in &results {
        log::info!(
            "{y}: {} of {} tracts predicted DAC",
            r.dac_count,
            r.predictions.len()
        );
        ctx.write_with(&out.join(format!("predictions_{y}.csv")), |b| {
            write_predictions(&r.predictions, b)
        })?;
        if let Some(g) = &geo {
            let annotated = annotate_geojson(g, &prop, *y, &r.predictions)?;
            let mut bytes = serde_json::to_vec(&annotated).map_err(Error::from)?;
            bytes.push(b'\n');
            ctx.write(&out.join(format!("dac_{y}.geojson")), &bytes)?;
        }
        counts.push((*y, r.dac_count, r.predictions.len()));
    }
    ctx.write_with(&out.join("counts.csv"), |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["year", "dac_count", "n_tracts"])?;
        for (y, c, n) in &counts {
            w.write_record([y.to_string(), c.to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Some(manifest_for(&out, true)))
}

fn cmd_trend(ctx: &mut Ctx, a: &TrendArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let counts = report::read_counts(ctx.read_bytes(&required(&a.counts, "counts")?)?.as_slice())?;
    let yearly = load_yearly(ctx, &a.features)?;
    let method: Correlation = match &a.method {
        Some(m) => m.parse().map_err(|e: Error| usage(e.to_string()))?,
        None => Correlation::Pearson,
    };
    let selected: Vec<String> = match (&a.select, &a.importance) {
        (Some(s), _) => s
            .split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect(),
        (None, Some(p)) => {
            let t = report::read_importance("", ctx.read_bytes(p)?.as_slice())?;
            t.rows
                .into_iter()
                .take(a.top.unwrap_or(10))
                .map(|r| r.0)
                .collect()
        }
        (None, None) => return Err(usage("pass --select or --importance to choose features")),
    };
    let bins = load_bins(ctx, &a.income_bins)?;
    let mut means = BTreeMap::new();
    for (y, m) in &yearly {
        let weights = if a.unweighted {
            None
        } else {
            let dir = a
                .population
                .as_ref()
                .ok_or_else(|| usage("population weights need --population DIR (or pass --unweighted)"))?;
            let p = dir.join(format!("acs_{y}.csv"));
            let bytes = ctx.read_bytes(&p)?;
            let acs = ingest::parse_acs::<TractId, _>(
                bytes.as_slice(),
                &ingest::canonical_acs_map(&bins),
                &bins,
                &ReadOptions::default(),
            )?;
            Some(
                acs.records
                    .into_iter()
                    .map(|r| (r.geo, r.total_population as f64))
                    .collect::<BTreeMap<_, _>>(),
            )
        };
        means.insert(*y, analysis::feature_means(m, &selected, weights.as_ref())?);
    }
    let counts: BTreeMap<u16, usize> = counts
        .into_iter()
        .filter(|(y, _)| yearly.contains_key(y))
        .collect();
    let rep = analysis::correlate_trends(&counts, &means, &selected, method)?;
    ctx.write_with(&out, |b| rep.write_csv(b))?;
    Ok(Some(manifest_for(&out, false)))
}

fn parse_history(s: &str) -> CliResult<Vec<u16>> {
    let bad = || usage(format!("--history expects FIRST-LAST or a comma list, got {s:?}"));
    if let Some((a, b)) = s.split_once('-') {
        let a: u16 = a.trim().parse().map_err(|_| bad())?;
        let b: u16 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse().map_err(|_| bad()))
        .collect()
}

fn cmd_synth(ctx: &mut Ctx, a: &SynthArgs, seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let mut cfg = if a.residence_driven {
        SynthConfig::residence_driven()
    } else {
        SynthConfig::default()
    };
    cfg.seed = seed;
    if let Some(v) = a.tracts {
        cfg.tracts = v;
    }
    if let Some(v) = a.year {
        cfg.year = v;
    }
    if let Some(h) = &a.history {
        cfg.history = parse_history(h)?;
    }
    for (slot, v) in [
        (&mut cfg.noise, a.noise),
        (&mut cfg.dac_fraction, a.dac_fraction),
        (&mut cfg.housing_fraction, a.housing_fraction),
        (&mut cfg.wac_coupling, a.wac_coupling),
        (&mut cfg.income_drift, a.income_drift),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = synth::generate(&cfg)?;
    let tmp = tempfile::tempdir().map_err(Error::from)?;
    for p in corpus.write_to(tmp.path())? {
        let bytes = fs::read(&p).map_err(Error::from)?;
        ctx.write(&out.join(p.file_name().expect("generated file name")), &bytes)?;
    }
    log::info!(
        "{} tracts, {} flagged, years {:?}",
        cfg.tracts,
        corpus.dac.iter().filter(|r| r.dac).count(),
        cfg.years()
    );
    Ok(Some(manifest_for(&out, true)))
}

fn cmd_report(ctx: &mut Ctx, a: &ReportArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let mut inputs = ReportInputs::default();
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        explicit
            .clone()
            .or_else(|| a.dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists()))
    };
    if let Some(p) = pick(&a.from, "grid.csv") {
        inputs.grid = Some(F1Grid::read_csv(ctx.read_bytes(&p)?.as_slice()).map_err(|e| with_path(&p, e))?);
    }
    let mut imp_paths = a.importance.clone();
    if imp_paths.is_empty() {
        if let Some(d) = &a.dir {
            let mut found: Vec<PathBuf> = fs::read_dir(d)
                .map_err(|source| Error::File {
                    path: d.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("importance") && n.ends_with(".csv"))
                })
                .collect();
            found.sort();
            imp_paths = found;
        }
    }
    for p in &imp_paths {
        let title = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("importance")
            .to_string();
        inputs.importance.push(
            report::read_importance(&title, ctx.read_bytes(p)?.as_slice()).map_err(|e| with_path(p, e))?,
        );
    }
    if let Some(p) = pick(&a.diagnostics, "rankings.csv") {
        inputs.diagnostics =
            report::read_diagnostics(ctx.read_bytes(&p)?.as_slice()).map_err(|e| with_path(&p, e))?;
    }
    if let Some(p) = pick(&a.counts, "counts.csv") {
        inputs.counts =
            Some(report::read_counts(ctx.read_bytes(&p)?.as_slice()).map_err(|e| with_path(&p, e))?);
    }
    if let Some(p) = pick(&a.trend, "trend.csv") {
        inputs.trend =
            Some(report::read_trend(ctx.read_bytes(&p)?.as_slice()).map_err(|e| with_path(&p, e))?);
    }
    let text = report::emit_report(&inputs, a.top.unwrap_or(10));
    match &a.out {
        Some(out) => {
            ctx.write(out, text.as_bytes())?;
            Ok(Some(manifest_for(out, false)))
        }
        None => {
            print!("{text}");
            Ok(None)
        }
    }
}

fn cmd_predict(ctx: &mut Ctx, a: &PredictArgs, _seed: u64) -> CliResult<Option<PathBuf>> {
    let out = required(&a.out, "out")?;
    let model = ctx.load_model(&required(&a.model, "model")?)?;
    let m = ctx.load_matrix(&required(&a.features, "features")?, None)?;
    let std = model.standardize(&m)?;
    let preds = models::predict(&model, &std, threshold(a.threshold)?)?;
    ctx.write_with(&out, |b| write_predictions(&preds, b))?;
    Ok(Some(manifest_for(&out, false)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_and_false_flags_do_not() {
        let file = json!({"out": "a", "strict_sums": true, "year": 2015});
        let cli = IngestArgs {
            year: Some(2018),
            ..Default::default()
        };
        let m = merge(&cli, Some(&file)).unwrap();
        assert_eq!(m.year, Some(2018));
        assert!(m.strict_sums);
        assert_eq!(m.out, Some(PathBuf::from("a")));
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let file = json!({"yeer": 2015});
        assert!(matches!(
            merge(&IngestArgs::default(), Some(&file)),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn config_sections() {
        let manifest = json!({"subcommand": "train", "config": {"family": "GBM"}});
        assert_eq!(
            config_section(&manifest, "train").unwrap(),
            json!({"family": "GBM"})
        );
        assert!(config_section(&manifest, "automl").is_err());
        let multi = json!({"seed": 4, "train": {"family": "GLM"}});
        assert_eq!(
            config_section(&multi, "train").unwrap(),
            json!({"family": "GLM", "seed": 4})
        );
    }

    #[test]
    fn years_from_paths() {
        assert_eq!(year_from_path(Path::new("x/features_v2b_2016.csv")), Some(2016));
        assert_eq!(year_from_path(Path::new("x/features.csv")), None);
        assert_eq!(year_path("2014=a.csv").unwrap(), (2014, PathBuf::from("a.csv")));
        assert_eq!(parse_history("2013-2015").unwrap(), vec![2013, 2014, 2015]);
        assert!(parse_history("2015-2013").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["dacml", "--bogus"]), 2);
        assert_eq!(
            run([
                "dacml",
                "train",
                "--features",
                "/nonexistent/x.csv",
                "--family",
                "GBM",
                "--out",
                "/tmp/never"
            ]),
            1
        );
        assert_eq!(run(["dacml", "train", "--family", "GBM"]), 2);
    }
}
