//! Rolling per-day protocol: for each test day, standardize every involved
//! day by its own preceding days, fit the class threshold on the pooled
//! training targets, train (or configure the naive baseline) from scratch,
//! and score the test day.
//!
//! Every artifact used to score day `d` is computed from days strictly before
//! `d`; [`audit_no_lookahead`] checks this by perturbing day `d` onwards.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::book::{read_snapshots_csv, reconstruct, write_snapshots_csv, BookError, BookSnapshot};
use crate::features::{prepare_day, DaySnapshots, FeatureError, PreparedDay, Scaler, Variant};
use crate::itch::{stream_messages, ItchError};
use crate::labeling::{
    build_samples, choose_alpha, day_targets, write_archive, Label, LabelError, LabeledSample, LabelingPolicy,
};
use crate::metrics::{
    aggregate_daily, confusion, render_comparison, render_table, AggregateReport, DirectionalBasis,
    EvaluationReport, MetricsError,
};
use crate::naive::naive_predict;
use crate::nn::{train, ArchitectureSpec, Model, NnError, Preset, PresetWidths, TrainConfig};
use crate::synth::{generate, SynthConfig, SynthError};

/// Current config schema version.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{date}: need {needed} prior days, have {available}")]
    InsufficientHistory {
        date: NaiveDate,
        needed: usize,
        available: usize,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{context}: {source}")]
    Itch { context: String, source: ItchError },
    #[error("{context}: {source}")]
    Book { context: String, source: BookError },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{date}: {source}")]
    Feature { date: NaiveDate, source: FeatureError },
    #[error("{date}: {source}")]
    Label { date: NaiveDate, source: LabelError },
    #[error("{date}: {source}")]
    Nn { date: NaiveDate, source: NnError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no eligible day: {0}")]
    NoEligibleDays(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where the snapshots come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Directory of binary ITCH 5.0 files, one per day, named `YYYY-MM-DD*`.
    Itch { dir: PathBuf },
    /// Directory of snapshot CSVs, one per day, named `YYYY-MM-DD*.csv`.
    Snapshots { dir: PathBuf },
    /// Generated in memory.
    Synth { config: SynthConfig },
}

/// Inclusive calendar bounds on the days loaded (history included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.first <= d && d <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelChoice {
    /// Truncated-target baseline; needs the `r_{k,k'}` target.
    Naive,
    /// CNN-LSTM preset. Without an explicit preset the variant picks one:
    /// full book → `deeplob_full`, Level-1 → `level1`, narrower → `slim`.
    Network {
        #[serde(default)]
        preset: Option<Preset>,
        #[serde(default)]
        widths: PresetWidths,
    },
}

impl Default for ModelChoice {
    fn default() -> Self {
        ModelChoice::Network {
            preset: None,
            widths: PresetWidths::default(),
        }
    }
}

pub fn default_preset(variant: Variant) -> Preset {
    match variant {
        Variant::FullLob => Preset::DeeplobFull,
        Variant::Level1 => Preset::Level1,
        _ => Preset::Slim,
    }
}

/// One experiment. Parsed from TOML; the README documents the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub data: DataSource,
    /// Instrument to reconstruct from ITCH input; ignored otherwise.
    pub symbol: String,
    pub date_range: Option<DateRange>,
    pub variant: Variant,
    pub policy: LabelingPolicy,
    pub model: ModelChoice,
    pub train_days: usize,
    pub scaler_days: usize,
    /// Keep every n-th training sample (on top of `policy.stride`).
    pub train_stride: usize,
    pub directional_basis: DirectionalBasis,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            data: DataSource::Synth {
                config: SynthConfig::default(),
            },
            symbol: "SYNTH".into(),
            date_range: None,
            variant: Variant::FullLob,
            policy: LabelingPolicy::default(),
            model: ModelChoice::default(),
            train_days: 20,
            scaler_days: 5,
            train_stride: 1,
            directional_basis: DirectionalBasis::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables. The
/// value is parsed as a TOML literal when possible, else taken as a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), RunError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| RunError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(RunError::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| RunError::Config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides, and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, RunError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| RunError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        ExperimentConfig::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.train_days == 0 || self.scaler_days == 0 || self.train_stride == 0 {
            return bad("train_days, scaler_days and train_stride must be at least 1".into());
        }
        if let Some(r) = self.date_range {
            if r.first > r.last {
                return bad(format!("date range {} .. {} is empty", r.first, r.last));
            }
        }
        self.policy
            .validate()
            .map_err(|e| RunError::Config(format!("policy: {e}")))?;
        match &self.model {
            ModelChoice::Naive => {
                if self.policy.target != crate::labeling::TargetKind::RkK {
                    return bad("the naive baseline needs target = \"rk_k\"".into());
                }
            }
            ModelChoice::Network { .. } => {
                self.train
                    .validate()
                    .map_err(|e| RunError::Config(format!("train: {e}")))?;
                self.architecture()
                    .expect("network model")
                    .infer_shapes()
                    .map_err(|e| RunError::Config(format!("architecture: {e}")))?;
            }
        }
        if let DataSource::Synth { config } = &self.data {
            config.validate_for(&self.policy)?;
        }
        Ok(())
    }

    /// Days needed before the first scorable day.
    pub fn history_needed(&self) -> usize {
        self.scaler_days + self.train_days
    }

    pub fn architecture(&self) -> Option<ArchitectureSpec> {
        match &self.model {
            ModelChoice::Naive => None,
            ModelChoice::Network { preset, widths } => Some(ArchitectureSpec::preset(
                preset.unwrap_or_else(|| default_preset(self.variant)),
                self.policy.window,
                self.variant.width(),
                *widths,
            )),
        }
    }

    /// Name used in reports, e.g. `level1/prices_only` or `naive`.
    pub fn model_name(&self) -> String {
        match &self.model {
            ModelChoice::Naive => "naive".into(),
            ModelChoice::Network { preset, .. } => format!(
                "{}/{}",
                preset.unwrap_or_else(|| default_preset(self.variant)).name(),
                self.variant.name()
            ),
        }
    }

    /// SHA-256 of the canonical JSON form, with `output_dir` blanked so the
    /// digest names the experiment rather than where it was written.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checksum of one input unit (a file, or a generated day).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputChecksum {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Days in ascending date order, with checksums of what they came from.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub days: Vec<DaySnapshots>,
    pub inputs: Vec<InputChecksum>,
}

/// Date encoded in the leading `YYYY-MM-DD` of a file name.
pub fn date_from_file_name(path: &Path) -> Option<NaiveDate> {
    let name = path.file_name()?.to_str()?;
    NaiveDate::parse_from_str(name.get(..10)?, "%Y-%m-%d").ok()
}

fn dated_files(dir: &Path, ext: Option<&str>) -> Result<Vec<(NaiveDate, PathBuf)>, RunError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if !path.is_file() || ext.is_some_and(|e| path.extension().and_then(|x| x.to_str()) != Some(e)) {
            continue;
        }
        if let Some(d) = date_from_file_name(&path) {
            files.push((d, path));
        }
    }
    files.sort();
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(RunError::Config(format!(
            "two input files for {}: {} and {}",
            w[0].0,
            w[0].1.display(),
            w[1].1.display()
        )));
    }
    Ok(files)
}

fn checksum(name: String, bytes: &[u8]) -> InputChecksum {
    InputChecksum {
        name,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Replays one day of ITCH messages for `symbol`.
pub fn snapshots_from_itch(bytes: &[u8], symbol: &str, context: &str) -> Result<Vec<BookSnapshot>, RunError> {
    let messages = stream_messages(bytes)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| RunError::Itch {
            context: context.to_string(),
            source,
        })?;
    let rec = reconstruct(&messages, symbol).map_err(|source| RunError::Book {
        context: context.to_string(),
        source,
    })?;
    Ok(rec.snapshots)
}

/// Loads every day of the configured source inside `date_range`.
pub fn load_days(cfg: &ExperimentConfig) -> Result<LoadedData, RunError> {
    let mut days = Vec::new();
    let mut inputs = Vec::new();
    let wanted = |d: NaiveDate| cfg.date_range.is_none_or(|r| r.contains(d));
    match &cfg.data {
        DataSource::Snapshots { dir } => {
            for (date, path) in dated_files(dir, Some("csv"))? {
                if !wanted(date) {
                    continue;
                }
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                let snapshots = read_snapshots_csv(bytes.as_slice()).map_err(|source| RunError::Book {
                    context: path.display().to_string(),
                    source,
                })?;
                inputs.push(checksum(file_name(&path), &bytes));
                days.push(DaySnapshots { date, snapshots });
            }
        }
        DataSource::Itch { dir } => {
            for (date, path) in dated_files(dir, None)? {
                if !wanted(date) {
                    continue;
                }
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                let snapshots = snapshots_from_itch(&bytes, &cfg.symbol, &path.display().to_string())?;
                inputs.push(checksum(file_name(&path), &bytes));
                days.push(DaySnapshots { date, snapshots });
            }
        }
        DataSource::Synth { config } => {
            for day in generate(config)? {
                if !wanted(day.date) {
                    continue;
                }
                let mut csv = Vec::new();
                write_snapshots_csv(&mut csv, &day.snapshots).map_err(|source| RunError::Book {
                    context: format!("synthetic {}", day.date),
                    source,
                })?;
                inputs.push(checksum(format!("synth:{}", day.date), &csv));
                days.push(day);
            }
        }
    }
    Ok(LoadedData { days, inputs })
}

/// Writes each day as `<dir>/YYYY-MM-DD.csv`.
pub fn write_snapshot_dir(dir: &Path, days: &[DaySnapshots]) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(days.len());
    for day in days {
        let path = dir.join(format!("{}.csv", day.date));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_snapshots_csv(io::BufWriter::new(file), &day.snapshots).map_err(|source| RunError::Book {
            context: path.display().to_string(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Everything fitted from the history of one test day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayArtifacts {
    pub date: NaiveDate,
    /// Scaler for the test day itself.
    pub scaler: Scaler,
    pub alpha: f64,
    pub training_days: Vec<NaiveDate>,
    pub training_samples: usize,
    pub model: Option<Model>,
    pub epoch_losses: Vec<f64>,
}

impl DayArtifacts {
    /// SHA-256 over the bit patterns of every parameter, in order.
    pub fn parameter_digest(&self) -> Option<String> {
        self.model.as_ref().map(|m| {
            let mut h = Sha256::new();
            for p in m.parameters() {
                for v in p.data() {
                    h.update(v.to_le_bytes());
                }
            }
            hex::encode(h.finalize())
        })
    }
}

fn prepare(
    cfg: &ExperimentConfig,
    prior: &[DaySnapshots],
    day: &DaySnapshots,
) -> Result<(Scaler, PreparedDay), RunError> {
    let feat = |source| RunError::Feature {
        date: day.date,
        source,
    };
    let scaler = Scaler::fit_over(prior, day.date, cfg.scaler_days).map_err(feat)?;
    let prepared = prepare_day(day, &scaler, cfg.variant).map_err(feat)?;
    Ok((scaler, prepared))
}

/// Fits the scaler, threshold and model used to score `days[index]`, reading
/// only `days[..index]`.
pub fn fit_for_day(
    cfg: &ExperimentConfig,
    days: &[DaySnapshots],
    index: usize,
) -> Result<DayArtifacts, RunError> {
    let date = days[index].date;
    let history = &days[..index];
    if history.iter().any(|d| d.date >= date) {
        return Err(RunError::Config(format!(
            "days are not in ascending order around {date}"
        )));
    }
    let needed = cfg.history_needed();
    if history.len() < needed {
        return Err(RunError::InsufficientHistory {
            date,
            needed,
            available: history.len(),
        });
    }
    let scaler = Scaler::fit_over(history, date, cfg.scaler_days)
        .map_err(|source| RunError::Feature { date, source })?;

    let first = history.len() - cfg.train_days;
    let mut prepared = Vec::with_capacity(cfg.train_days);
    let mut pooled = Vec::new();
    for p in first..history.len() {
        let (_, day) = prepare(cfg, &history[..p], &history[p])?;
        let targets = day_targets(&day.mid.values, &cfg.policy).map_err(|source| RunError::Label {
            date: day.date,
            source,
        })?;
        pooled.extend(targets.into_iter().map(|(_, y)| y));
        prepared.push(day);
    }
    let alpha = choose_alpha(&pooled).map_err(|source| RunError::Label { date, source })?;
    let training_days = prepared.iter().map(|d| d.date).collect();

    let Some(spec) = cfg.architecture() else {
        return Ok(DayArtifacts {
            date,
            scaler,
            alpha,
            training_days,
            training_samples: pooled.len(),
            model: None,
            epoch_losses: Vec::new(),
        });
    };
    let policy = cfg.policy.with_alpha(alpha);
    let mut samples: Vec<LabeledSample> = Vec::new();
    for day in &prepared {
        let s = build_samples(day, &policy).map_err(|source| RunError::Label {
            date: day.date,
            source,
        })?;
        samples.extend(s);
    }
    let samples: Vec<LabeledSample> = samples.into_iter().step_by(cfg.train_stride).collect();
    let nn = |source| RunError::Nn { date, source };
    let model = Model::build(spec, cfg.train.seed).map_err(nn)?;
    let trained = train(model, &samples, &cfg.train).map_err(nn)?;
    Ok(DayArtifacts {
        date,
        scaler,
        alpha,
        training_days,
        training_samples: samples.len(),
        model: Some(trained.model),
        epoch_losses: trained.epoch_losses,
    })
}

/// Per-day output: the evaluation report plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub report: EvaluationReport,
    pub alpha: f64,
    pub scaler: Scaler,
    pub training_days: Vec<NaiveDate>,
    pub training_samples: usize,
    pub test_samples: usize,
    pub epoch_losses: Vec<f64>,
    pub parameter_digest: Option<String>,
}

/// Predictions and truths of the test day's samples.
pub fn predict_day(
    cfg: &ExperimentConfig,
    artifacts: &DayArtifacts,
    day: &DaySnapshots,
) -> Result<(Vec<Label>, Vec<Label>), RunError> {
    let date = day.date;
    if artifacts.date != date {
        return Err(RunError::Config(format!(
            "artifacts fitted for {} applied to {date}",
            artifacts.date
        )));
    }
    let prepared = prepare_day(day, &artifacts.scaler, cfg.variant)
        .map_err(|source| RunError::Feature { date, source })?;
    let policy = cfg.policy.with_alpha(artifacts.alpha);
    let label = |source| RunError::Label { date, source };
    let samples = build_samples(&prepared, &policy).map_err(label)?;
    let truths: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let preds = match &artifacts.model {
        None => samples
            .iter()
            .map(|s| naive_predict(&prepared.mid.values, s.t, &policy))
            .collect::<Result<Vec<_>, _>>()
            .map_err(label)?,
        Some(model) => {
            let windows: Vec<&[f64]> = samples.iter().map(|s| s.window()).collect();
            model
                .predict_batch(&windows)
                .map_err(|source| RunError::Nn { date, source })?
        }
    };
    Ok((preds, truths))
}

/// Scores `days[index]` with artifacts fitted on the days before it.
pub fn run_day(cfg: &ExperimentConfig, days: &[DaySnapshots], index: usize) -> Result<DayRecord, RunError> {
    let artifacts = fit_for_day(cfg, days, index)?;
    let (preds, truths) = predict_day(cfg, &artifacts, &days[index])?;
    let cm = confusion(&preds, &truths)?;
    Ok(DayRecord {
        report: EvaluationReport::from_confusion(artifacts.date, cfg.model_name(), cm, cfg.directional_basis),
        alpha: artifacts.alpha,
        parameter_digest: artifacts.parameter_digest(),
        scaler: artifacts.scaler,
        training_days: artifacts.training_days,
        training_samples: artifacts.training_samples,
        test_samples: truths.len(),
        epoch_losses: artifacts.epoch_losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum DayOutcome {
    Evaluated(DayRecord),
    Failed { date: NaiveDate, error: String },
}

impl DayOutcome {
    pub fn date(&self) -> NaiveDate {
        match self {
            DayOutcome::Evaluated(r) => r.report.day,
            DayOutcome::Failed { date, .. } => *date,
        }
    }

    pub fn record(&self) -> Option<&DayRecord> {
        match self {
            DayOutcome::Evaluated(r) => Some(r),
            DayOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeResult {
    pub outcomes: Vec<DayOutcome>,
    /// Daily aggregate over the evaluated days; `None` if all failed.
    pub aggregate: Option<AggregateReport>,
    pub table: String,
}

impl RangeResult {
    pub fn reports(&self) -> Vec<&EvaluationReport> {
        self.outcomes
            .iter()
            .filter_map(|o| o.record())
            .map(|r| &r.report)
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.record().is_none()).count()
    }
}

/// Scores every day with enough history. A failing day is recorded and the
/// rest still run.
pub fn execute_range(cfg: &ExperimentConfig, days: &[DaySnapshots]) -> Result<RangeResult, RunError> {
    let needed = cfg.history_needed();
    if days.len() <= needed {
        return Err(RunError::NoEligibleDays(format!(
            "{} days loaded, {needed} needed before the first test day",
            days.len()
        )));
    }
    let outcomes: Vec<DayOutcome> = (needed..days.len())
        .map(|i| match run_day(cfg, days, i) {
            Ok(r) => DayOutcome::Evaluated(r),
            Err(e) => DayOutcome::Failed {
                date: days[i].date,
                error: e.to_string(),
            },
        })
        .collect();
    let reports: Vec<EvaluationReport> = outcomes
        .iter()
        .filter_map(|o| o.record().map(|r| r.report.clone()))
        .collect();
    let aggregate = if reports.is_empty() {
        None
    } else {
        Some(aggregate_daily(&reports)?)
    };
    let mut table = match &aggregate {
        Some(a) => render_table(a),
        None => "no day was evaluated\n".to_string(),
    };
    for o in &outcomes {
        if let DayOutcome::Failed { date, error } = o {
            table.push_str(&format!("FAILED {date}: {error}\n"));
        }
    }
    Ok(RangeResult {
        outcomes,
        aggregate,
        table,
    })
}

/// Reproducibility record written next to every run's reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_version: u32,
    pub config_sha256: String,
    pub train_seed: u64,
    pub synth_seed: Option<u64>,
    pub inputs: Vec<InputChecksum>,
    pub evaluated: Vec<NaiveDate>,
    pub failed: Vec<NaiveDate>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, inputs: &[InputChecksum], outcomes: &[DayOutcome]) -> Self {
        let (ok, failed): (Vec<&DayOutcome>, Vec<&DayOutcome>) =
            outcomes.iter().partition(|o| o.record().is_some());
        Manifest {
            tool: "lobpredict".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_version: cfg.version,
            config_sha256: cfg.digest(),
            train_seed: cfg.train.seed,
            synth_seed: match &cfg.data {
                DataSource::Synth { config } => Some(config.seed),
                _ => None,
            },
            inputs: inputs.to_vec(),
            evaluated: ok.iter().map(|o| o.date()).collect(),
            failed: failed.iter().map(|o| o.date()).collect(),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

/// Layout under `dir`:
///
/// | path | content |
/// |---|---|
/// | `days/YYYY-MM-DD.json` | [`DayOutcome`] |
/// | `aggregate.json` | [`AggregateReport`] (absent if no day succeeded) |
/// | `aggregate.txt` | rendered table plus failed-day markers |
/// | `config.toml` | the effective config |
/// | `manifest.json` | [`Manifest`] |
pub fn write_range_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    inputs: &[InputChecksum],
    result: &RangeResult,
) -> Result<(), RunError> {
    let days_dir = dir.join("days");
    fs::create_dir_all(&days_dir).map_err(io_err(&days_dir))?;
    for o in &result.outcomes {
        write_text(&days_dir.join(format!("{}.json", o.date())), &to_json(o))?;
    }
    if let Some(a) = &result.aggregate {
        write_text(&dir.join("aggregate.json"), &to_json(a))?;
    }
    write_text(&dir.join("aggregate.txt"), &result.table)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    write_text(
        &dir.join("manifest.json"),
        &to_json(&Manifest::new(cfg, inputs, &result.outcomes)),
    )
}

/// Loads the data, scores every eligible day and writes the outputs to
/// `cfg.output_dir`.
pub fn run_range(cfg: &ExperimentConfig) -> Result<RangeResult, RunError> {
    cfg.validate()?;
    let data = load_days(cfg)?;
    let result = execute_range(cfg, &data.days)?;
    write_range_outputs(&cfg.output_dir, cfg, &data.inputs, &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub results: Vec<(Variant, RangeResult)>,
    pub table: String,
}

/// Runs the same protocol once per variant on shared data.
pub fn compare_on(
    cfg: &ExperimentConfig,
    days: &[DaySnapshots],
    variants: &[Variant],
) -> Result<Comparison, RunError> {
    if variants.is_empty() {
        return Err(RunError::Config("no variants to compare".into()));
    }
    let mut results = Vec::with_capacity(variants.len());
    let mut columns = Vec::with_capacity(variants.len());
    for &v in variants {
        let vc = ExperimentConfig {
            variant: v,
            ..cfg.clone()
        };
        vc.validate()?;
        let r = execute_range(&vc, days)?;
        let agg = r
            .aggregate
            .clone()
            .ok_or_else(|| RunError::NoEligibleDays(format!("every day failed for {}", v.name())))?;
        columns.push((v.label().to_string(), agg));
        results.push((v, r));
    }
    Ok(Comparison {
        table: render_comparison(&columns),
        results,
    })
}

/// [`compare_on`] over the configured data; writes one output tree per
/// variant plus `comparison.txt`.
pub fn compare_variants(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Comparison, RunError> {
    cfg.validate()?;
    let data = load_days(cfg)?;
    let cmp = compare_on(cfg, &data.days, variants)?;
    for (v, r) in &cmp.results {
        let vc = ExperimentConfig {
            variant: *v,
            ..cfg.clone()
        };
        write_range_outputs(&cfg.output_dir.join(v.name()), &vc, &data.inputs, r)?;
    }
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    write_text(&cfg.output_dir.join("comparison.txt"), &cmp.table)?;
    Ok(cmp)
}

/// Writes labeled-sample archives for every day that has `scaler_days` of
/// history, with one threshold fitted over the pooled targets of those days.
pub fn export_labels(
    cfg: &ExperimentConfig,
    days: &[DaySnapshots],
    dir: &Path,
) -> Result<Vec<PathBuf>, RunError> {
    if days.len() <= cfg.scaler_days {
        return Err(RunError::NoEligibleDays(format!(
            "{} days loaded, {} needed for scaling",
            days.len(),
            cfg.scaler_days
        )));
    }
    let mut prepared = Vec::new();
    let mut pooled = Vec::new();
    for i in cfg.scaler_days..days.len() {
        let (_, day) = prepare(cfg, &days[..i], &days[i])?;
        let t = day_targets(&day.mid.values, &cfg.policy).map_err(|source| RunError::Label {
            date: day.date,
            source,
        })?;
        pooled.extend(t.into_iter().map(|(_, y)| y));
        prepared.push(day);
    }
    let last = days[days.len() - 1].date;
    let alpha = choose_alpha(&pooled).map_err(|source| RunError::Label { date: last, source })?;
    let policy = cfg.policy.with_alpha(alpha);
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for day in &prepared {
        let label = |source| RunError::Label {
            date: day.date,
            source,
        };
        let samples = build_samples(day, &policy).map_err(label)?;
        let path = dir.join(format!("{}.samples", day.date));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_archive(io::BufWriter::new(file), day.date, &policy, &samples).map_err(label)?;
        written.push(path);
    }
    Ok(written)
}

/// Outcome of re-fitting one day's artifacts after tampering with that day
/// and every later one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub date: NaiveDate,
    pub perturbed_days: usize,
    pub parameter_digest: Option<String>,
    pub passed: bool,
}

/// Shifts every price by a day-dependent number of ticks, rescales volumes,
/// and drops a share of snapshots, on `days[from..]`.
pub fn perturb_from(days: &[DaySnapshots], from: usize, seed: u64) -> Vec<DaySnapshots> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = days.to_vec();
    for day in &mut out[from..] {
        let shift = rng.gen_range(1..50u32) * 100;
        let keep = rng.gen_range(0.5..1.0);
        day.snapshots.retain(|_| rng.gen_bool(keep));
        for s in &mut day.snapshots {
            for l in s.asks.iter_mut().chain(s.bids.iter_mut()) {
                if l.volume > 0 {
                    l.price = l.price.saturating_add(shift);
                    l.volume = l.volume.saturating_mul(rng.gen_range(1..4));
                }
            }
        }
    }
    out
}

/// Fits `days[index]`'s artifacts on the original data and again after
/// [`perturb_from`]`(days, index, seed)`; passes iff they are identical.
pub fn audit_no_lookahead(
    cfg: &ExperimentConfig,
    days: &[DaySnapshots],
    index: usize,
    seed: u64,
) -> Result<AuditOutcome, RunError> {
    let base = fit_for_day(cfg, days, index)?;
    let tampered = perturb_from(days, index, seed);
    let again = fit_for_day(cfg, &tampered, index)?;
    Ok(AuditOutcome {
        date: base.date,
        perturbed_days: days.len() - index,
        parameter_digest: base.parameter_digest(),
        passed: base == again,
    })
}

/// Reads the per-day outputs of a previous run back in date order.
pub fn read_day_outcomes(dir: &Path) -> Result<Vec<DayOutcome>, RunError> {
    let days_dir = dir.join("days");
    let mut by_date = BTreeMap::new();
    for (date, path) in dated_files(&days_dir, Some("json"))? {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let o: DayOutcome =
            serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        by_date.insert(date, o);
    }
    Ok(by_date.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_strings() {
        let mut t: toml::Table = "a = 1\n[b]\nc = 2".parse().unwrap();
        apply_override(&mut t, "b.c=5").unwrap();
        apply_override(&mut t, "b.d.e = 0.5").unwrap();
        apply_override(&mut t, "name=level1").unwrap();
        apply_override(&mut t, "flag=true").unwrap();
        assert_eq!(t["b"]["c"].as_integer(), Some(5));
        assert_eq!(t["b"]["d"]["e"].as_float(), Some(0.5));
        assert_eq!(t["name"].as_str(), Some("level1"));
        assert_eq!(t["flag"].as_bool(), Some(true));
        assert!(apply_override(&mut t, "a.x=1").is_err());
        assert!(apply_override(&mut t, "novalue").is_err());
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_bad_values() {
        let base = ExperimentConfig::default().to_toml();
        for o in [
            "version=2",
            "train_days=0",
            "scaler_days=0",
            "train_stride=0",
            "model.kind=\"naive\"",
            "variant=\"prices_only\"\nmodel.preset=\"level1\"",
        ] {
            let overrides: Vec<String> = o.split('\n').map(String::from).collect();
            assert!(ExperimentConfig::from_toml(&base, &overrides).is_err(), "{o}");
        }
        assert!(ExperimentConfig::from_toml("bogus = 1", &[]).is_err());
    }

    #[test]
    fn digest_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        let c = ExperimentConfig {
            train_days: 3,
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn file_names_carry_dates() {
        assert_eq!(
            date_from_file_name(Path::new("/x/2022-03-04.csv")),
            NaiveDate::from_ymd_opt(2022, 3, 4)
        );
        assert_eq!(
            date_from_file_name(Path::new("2022-03-04_AAPL.itch")),
            NaiveDate::from_ymd_opt(2022, 3, 4)
        );
        assert_eq!(date_from_file_name(Path::new("notes.csv")), None);
    }
}
