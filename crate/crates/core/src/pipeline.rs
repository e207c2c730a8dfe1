//! Run-directory orchestration behind the `qleak` binary.
//!
//! Each stage reads what earlier stages left in the run directory and
//! writes its own artifacts next to them:
//!
//! | stage  | writes |
//! |--------|--------|
//! | train  | `config.json`, `ground_truth.csv`, `test_split.csv`, `victim_log.jsonl`, `checkpoint.json`, `metrics.csv`, `train_report.json` |
//! | attack | `extracted.csv`, `extracted_<heuristic>.csv`, `attack.json` |
//! | refine | `refined.csv`, `refine_report.json` |
//! | clone  | `clone_metrics.csv`, `clone_report.json` |
//! | defend | `defended_log.jsonl`, `defended_metrics.csv`, `defended_checkpoint.json`, `defense_report.json` |
//! | report | `report.json`, `plots/*.csv` |
//!
//! `ground_truth.csv` and `test_split.csv` are read only by the scoring
//! code here; the adversary and refinery functions never receive them.
//! Wall-clock times go to `timings.json` so the other files are
//! byte-identical across reruns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{extract, AdversaryError, AdversaryView, ExtractedDataset, Heuristic, LogStore};
use crate::data::{make_blobs, scale_to_angle, split, DataError, Dataset};
use crate::defense::{evaluate_defense, make_defended_config, DefenseConfig, DefenseError, DefenseReport};
use crate::qnn::{train, Checkpoint, QnnConfig, QnnError, QnnModel, TrainReport};
use crate::refinery::{
    read_points_csv, refine, ClassifierSpec, RefineConfig, RefineError, RefineReport,
};
use crate::truth::GroundTruth;

/// Environment variable naming the default parent of run directories.
pub const OUTPUT_ROOT_ENV: &str = "QLEAK_OUTPUT_ROOT";

pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const GROUND_TRUTH: &str = "ground_truth.csv";
    pub const TEST_SPLIT: &str = "test_split.csv";
    pub const VICTIM_LOG: &str = "victim_log.jsonl";
    pub const CHECKPOINT: &str = "checkpoint.json";
    pub const METRICS: &str = "metrics.csv";
    pub const TRAIN_REPORT: &str = "train_report.json";
    pub const EXTRACTED: &str = "extracted.csv";
    pub const ATTACK: &str = "attack.json";
    pub const REFINED: &str = "refined.csv";
    pub const REFINE_REPORT: &str = "refine_report.json";
    pub const CLONE_METRICS: &str = "clone_metrics.csv";
    pub const CLONE_REPORT: &str = "clone_report.json";
    pub const DEFENDED_LOG: &str = "defended_log.jsonl";
    pub const DEFENDED_METRICS: &str = "defended_metrics.csv";
    pub const DEFENDED_CHECKPOINT: &str = "defended_checkpoint.json";
    pub const DEFENSE_REPORT: &str = "defense_report.json";
    pub const REPORT: &str = "report.json";
    pub const TIMINGS: &str = "timings.json";
    pub const LOCK: &str = ".lock";
    pub const PLOTS: &str = "plots";
    pub const PLOT_HEURISTICS: &str = "heuristic_accuracy.csv";
    pub const PLOT_TREND: &str = "accuracy_vs_training.csv";
    pub const PLOT_REFINEMENT: &str = "refinement.csv";
    pub const PLOT_CLONE: &str = "victim_vs_clone.csv";
    pub const PLOT_DEFENSE: &str = "defense.csv";

    pub fn extracted_for(h: crate::adversary::Heuristic) -> String {
        format!("extracted_{h}.csv")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing {}; run `{stage}` first", path.display())]
    Missing { path: PathBuf, stage: &'static str },
    #[error("run directory {} is locked (remove {} if no other run is active)", .0.display(), files::LOCK)]
    Locked(PathBuf),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    /// 2 for configuration problems, 3 for data problems, 4 for internal
    /// invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Locked(_) => 2,
            Self::Data(_) | Self::Io { .. } | Self::Missing { .. } => 3,
            Self::Invariant(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl From<QnnError> for PipelineError {
    fn from(e: QnnError) -> Self {
        match e {
            QnnError::Config(_) | QnnError::DefenseNotConfigured => Self::Config(e.to_string()),
            QnnError::Sim(_) | QnnError::ParamShape { .. } | QnnError::Checkpoint(_) => Self::Invariant(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<AdversaryError> for PipelineError {
    fn from(e: AdversaryError) -> Self {
        match e {
            AdversaryError::UnknownHeuristic(_) | AdversaryError::UnknownView(_) | AdversaryError::SubsetOutOfRange { .. } | AdversaryError::EmptySubset => {
                Self::Config(e.to_string())
            }
            AdversaryError::EpochOrder { .. } => Self::Invariant(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<RefineError> for PipelineError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::BadK(_) | RefineError::BadThreshold(_) | RefineError::TooFewClassifiers(_) | RefineError::BadClassifier(_) => {
                Self::Config(e.to_string())
            }
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DefenseError> for PipelineError {
    fn from(e: DefenseError) -> Self {
        match e {
            DefenseError::Qnn(q) => q.into(),
            DefenseError::Adversary(a) => a.into(),
            DefenseError::MissingLog(_) | DefenseError::LabelOutOfRange { .. } => Self::Data(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Bundled 150-row Iris.
    Iris,
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
    Blobs {
        n: usize,
        d: usize,
        n_classes: usize,
        spread: f64,
    },
}

fn default_label_column() -> String {
    "label".into()
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            Self::Iris => "iris".into(),
            Self::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
            Self::Blobs { .. } => "blobs".into(),
        }
    }

    fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            Self::Iris => Ok(Dataset::iris()),
            Self::Csv { path, label_column } => {
                if !path.is_file() {
                    return Err(PipelineError::Config(format!("dataset file {} does not exist", path.display())));
                }
                Ok(Dataset::load_csv(path, label_column)?)
            }
            Self::Blobs { n, d, n_classes, spread } => Ok(make_blobs(*n, *d, *n_classes, *spread, seed)?),
        }
    }
}

/// Which heuristics an attack runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicChoice {
    Majority,
    Wlinear,
    Wexp,
    #[default]
    All,
}

impl HeuristicChoice {
    pub fn heuristics(self) -> Vec<Heuristic> {
        match self {
            Self::Majority => vec![Heuristic::Majority],
            Self::Wlinear => vec![Heuristic::WeightedLinear],
            Self::Wexp => vec![Heuristic::WeightedExp],
            Self::All => Heuristic::ALL.to_vec(),
        }
    }

    /// The heuristic whose extraction feeds refinement.
    pub fn primary(self) -> Heuristic {
        match self {
            Self::Majority => Heuristic::Majority,
            Self::Wlinear => Heuristic::WeightedLinear,
            Self::Wexp | Self::All => Heuristic::WeightedExp,
        }
    }
}

impl FromStr for HeuristicChoice {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Self::Majority),
            "wlinear" => Ok(Self::Wlinear),
            "wexp" => Ok(Self::Wexp),
            "all" => Ok(Self::All),
            other => Err(PipelineError::Config(format!(
                "unknown heuristic {other:?} (expected majority, wlinear, wexp, all)"
            ))),
        }
    }
}

impl fmt::Display for HeuristicChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Majority => "majority",
            Self::Wlinear => "wlinear",
            Self::Wexp => "wexp",
            Self::All => "all",
        })
    }
}

fn default_classifiers() -> Vec<ClassifierSpec> {
    ClassifierSpec::default_ensemble()
}

fn default_view() -> AdversaryView {
    AdversaryView::ClassProbs
}

/// One JSON document describing a whole run. `seed` overrides the seeds in
/// `qnn` and `refine`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub qnn: QnnConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierSpec>,
    #[serde(default)]
    pub defense: Option<DefenseConfig>,
    #[serde(default)]
    pub heuristic: HeuristicChoice,
    #[serde(default = "default_view")]
    pub adversary_view: AdversaryView,
    /// Parent directory for runs when no run directory is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    /// Iris, 90/60 split, the 4-qubit 6-layer model trained for 60 epochs,
    /// with a one-mask-class defense.
    pub fn iris(seed: u64) -> Self {
        Self {
            dataset: DatasetSpec::Iris,
            n_train: 90,
            n_test: 60,
            qnn: QnnConfig {
                epochs: 60,
                ..QnnConfig::iris(seed)
            },
            refine: RefineConfig::new(seed),
            classifiers: default_classifiers(),
            defense: Some(DefenseConfig::default()),
            heuristic: HeuristicChoice::All,
            adversary_view: AdversaryView::ClassProbs,
            output_dir: None,
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                PipelineError::Config(format!("config file {} does not exist", path.display()))
            } else {
                io_err(path, e)
            }
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Copy with the run seed pushed into every component.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.qnn.seed = c.seed;
        c.refine.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.qnn.validate()?;
        self.refine.validate()?;
        if self.classifiers.len() < 2 {
            return Err(PipelineError::Config("at least 2 classifiers are needed for refinement".into()));
        }
        for c in &self.classifiers {
            c.validate()?;
        }
        if self.n_train == 0 {
            return Err(PipelineError::Config("n_train must be positive".into()));
        }
        if let DatasetSpec::Csv { path, .. } = &self.dataset {
            if !path.is_file() {
                return Err(PipelineError::Config(format!("dataset file {} does not exist", path.display())));
            }
        }
        if let Some(d) = &self.defense {
            make_defended_config(&self.qnn, d)?;
        }
        Ok(())
    }

    /// Default run directory name under the output root.
    pub fn run_name(&self) -> String {
        format!("{}-seed{}", self.dataset.name(), self.seed)
    }

    /// `output_dir`, else `$QLEAK_OUTPUT_ROOT`, else `runs`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Loads, splits and angle-encodes the dataset.
    pub fn prepare_dataset(&self) -> Result<Dataset> {
        let ds = self.dataset.load(self.seed)?;
        if ds.n_classes() != self.qnn.n_classes {
            return Err(PipelineError::Config(format!(
                "dataset has {} classes but the model expects {}",
                ds.n_classes(),
                self.qnn.n_classes
            )));
        }
        if ds.n_features() != self.qnn.n_qubits {
            return Err(PipelineError::Config(format!(
                "dataset has {} features but the model has {} qubits",
                ds.n_features(),
                self.qnn.n_qubits
            )));
        }
        Ok(scale_to_angle(split(ds, self.n_train, self.n_test, self.seed)?)?)
    }
}

fn io_err(path: &Path, source: io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Exclusive handle on a run directory, released on drop.
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        let lock = root.join(files::LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(PipelineError::Locked(root.to_path_buf())),
            Err(e) => return Err(io_err(&lock, e)),
        }
        Ok(Self {
            root: root.to_path_buf(),
            lock,
        })
    }

    /// Like [`RunDir::open`] but requires a directory `train` has populated.
    pub fn open_existing(root: &Path) -> Result<Self> {
        let config = root.join(files::CONFIG);
        if !config.is_file() {
            return Err(PipelineError::Missing {
                path: config,
                stage: "train",
            });
        }
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        File::create(&p).map(BufWriter::new).map_err(|e| io_err(&p, e))
    }

    fn reader(&self, name: &str, stage: &'static str) -> Result<BufReader<File>> {
        let p = self.path(name);
        match File::open(&p) {
            Ok(f) => Ok(BufReader::new(f)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(PipelineError::Missing { path: p, stage }),
            Err(e) => Err(io_err(&p, e)),
        }
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(&self.path(name), e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write_text(name, &text)
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &'static str) -> Result<T> {
        let r = self.reader(name, stage)?;
        serde_json::from_reader(r).map_err(|e| PipelineError::Data(format!("{}: {e}", self.path(name).display())))
    }

    fn config(&self) -> Result<RunConfig> {
        let cfg: RunConfig = self.read_json(files::CONFIG, "train")?;
        Ok(cfg)
    }

    fn truth(&self, name: &str) -> Result<GroundTruth> {
        Ok(GroundTruth::read_csv(self.reader(name, "train")?)?)
    }

    fn log(&self, name: &str, stage: &'static str) -> Result<LogStore> {
        LogStore::read_jsonl(self.reader(name, stage)?).map_err(|e| match e {
            AdversaryError::Corrupt { line, message } => {
                PipelineError::Data(format!("{} line {line}: {message}", self.path(name).display()))
            }
            other => other.into(),
        })
    }

    fn record_timing(&self, stage: &str, secs: f64) -> Result<()> {
        let mut t: BTreeMap<String, f64> = if self.exists(files::TIMINGS) {
            self.read_json(files::TIMINGS, "train").unwrap_or_default()
        } else {
            BTreeMap::new()
        };
        t.insert(stage.into(), secs);
        self.write_json(files::TIMINGS, &t)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn write_metrics_csv<W: Write>(report: &TrainReport, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| PipelineError::Data(e.to_string());
    w.write_record(["epoch", "loss", "train_accuracy", "test_accuracy"]).map_err(csv_err)?;
    for m in &report.epochs {
        w.write_record([
            m.epoch.to_string(),
            m.loss.to_string(),
            m.train_accuracy.to_string(),
            m.test_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| PipelineError::Data(e.to_string()))
}

fn timed<T>(dir: &RunDir, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    dir.record_timing(stage, start.elapsed().as_secs_f64())?;
    Ok(out)
}

/// Trains the victim with the adversary's logger attached.
pub fn cmd_train(config: &RunConfig, run_dir: &Path) -> Result<TrainReport> {
    let cfg = config.normalized();
    cfg.validate()?;
    let ds = cfg.prepare_dataset()?;
    let dir = RunDir::open(run_dir)?;
    timed(&dir, "train", || {
        dir.write_text(files::CONFIG, &(cfg.to_json() + "\n"))?;
        GroundTruth::from_train_split(&ds).write_csv(dir.create(files::GROUND_TRUTH)?)?;
        GroundTruth::new(
            ds.test_indices()
                .iter()
                .map(|&r| (ds.row(r).to_vec(), ds.labels()[r]))
                .collect(),
        )
        .write_csv(dir.create(files::TEST_SPLIT)?)?;

        let mut model = QnnModel::new(cfg.qnn.clone())?;
        let mut log = LogStore::new();
        let report = train(&mut model, &ds, Some(&mut log))?;
        let expected = cfg.qnn.epochs * ds.train_indices().len();
        if log.n_records() != expected {
            return Err(PipelineError::Invariant(format!(
                "logged {} records, expected {expected}",
                log.n_records()
            )));
        }
        log.write_jsonl(dir.create(files::VICTIM_LOG)?)?;
        dir.write_text(files::CHECKPOINT, &(Checkpoint::from_model(&model).to_json() + "\n"))?;
        write_metrics_csv(&report, dir.create(files::METRICS)?)?;
        dir.write_json(files::TRAIN_REPORT, &report)?;
        Ok(report)
    })
    .and_then(|r| {
        write_report(&dir)?;
        Ok(r)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub heuristic: Heuristic,
    pub view: AdversaryView,
    pub accuracy: f64,
}

/// Extraction accuracy after the adversary has seen `epoch` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub epoch: usize,
    pub victim_train_accuracy: f64,
    pub majority: f64,
    pub wlinear: f64,
    pub wexp: f64,
}

impl TrendPoint {
    pub fn accuracy(&self, h: Heuristic) -> f64 {
        match h {
            Heuristic::Majority => self.majority,
            Heuristic::WeightedLinear => self.wlinear,
            Heuristic::WeightedExp => self.wexp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub view: AdversaryView,
    pub heuristic: HeuristicChoice,
    pub primary: Heuristic,
    pub n_points: usize,
    pub total_epochs: usize,
    pub accuracies: Vec<AccuracyRow>,
    /// Same heuristics scored through the other view.
    pub alternate_view_accuracies: Vec<AccuracyRow>,
    pub trend: Vec<TrendPoint>,
}

impl AttackSummary {
    pub fn accuracy(&self, h: Heuristic) -> Option<f64> {
        self.accuracies.iter().find(|r| r.heuristic == h).map(|r| r.accuracy)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AttackOptions {
    pub heuristic: Option<HeuristicChoice>,
    pub view: Option<AdversaryView>,
}

fn score(truth: &GroundTruth, ex: &ExtractedDataset) -> f64 {
    truth.accuracy(ex.points.iter().map(|p| (p.angles.as_slice(), p.label)))
}

struct AttackOutput {
    summary: AttackSummary,
    extracted: Vec<ExtractedDataset>,
}

fn run_attack(
    cfg: &RunConfig,
    log: &LogStore,
    truth: &GroundTruth,
    victim: Option<&TrainReport>,
    choice: HeuristicChoice,
    view: AdversaryView,
) -> Result<AttackOutput> {
    let exec = cfg.qnn.execution;
    let total = log.last_epoch().ok_or_else(|| PipelineError::Data("victim log is empty".into()))?;
    let other = match view {
        AdversaryView::Expvals => AdversaryView::ClassProbs,
        AdversaryView::ClassProbs => AdversaryView::Expvals,
    };
    let mut extracted = Vec::new();
    let mut accuracies = Vec::new();
    let mut alternate = Vec::new();
    for h in choice.heuristics() {
        let ex = extract(log, h, view, None, total, exec)?;
        accuracies.push(AccuracyRow {
            heuristic: h,
            view,
            accuracy: score(truth, &ex),
        });
        let alt = extract(log, h, other, None, total, exec)?;
        alternate.push(AccuracyRow {
            heuristic: h,
            view: other,
            accuracy: score(truth, &alt),
        });
        extracted.push(ex);
    }
    let mut trend = Vec::with_capacity(log.epochs().len());
    for e in log.epochs() {
        let partial = log.truncated(e.epoch);
        let acc = |h| -> Result<f64> { Ok(score(truth, &extract(&partial, h, view, None, e.epoch, exec)?)) };
        trend.push(TrendPoint {
            epoch: e.epoch,
            victim_train_accuracy: victim
                .and_then(|r| r.epochs.iter().find(|m| m.epoch == e.epoch))
                .map_or(f64::NAN, |m| m.train_accuracy),
            majority: acc(Heuristic::Majority)?,
            wlinear: acc(Heuristic::WeightedLinear)?,
            wexp: acc(Heuristic::WeightedExp)?,
        });
    }
    Ok(AttackOutput {
        summary: AttackSummary {
            view,
            heuristic: choice,
            primary: choice.primary(),
            n_points: extracted.first().map_or(0, ExtractedDataset::len),
            total_epochs: total,
            accuracies,
            alternate_view_accuracies: alternate,
            trend,
        },
        extracted,
    })
}

/// Votes labels out of the victim log; scores them against the ground truth.
pub fn cmd_attack(run_dir: &Path, opts: AttackOptions) -> Result<AttackSummary> {
    let dir = RunDir::open_existing(run_dir)?;
    let cfg = dir.config()?;
    let choice = opts.heuristic.unwrap_or(cfg.heuristic);
    let view = opts.view.unwrap_or(cfg.adversary_view);
    let summary = timed(&dir, "attack", || {
        let log = dir.log(files::VICTIM_LOG, "train")?;
        let truth = dir.truth(files::GROUND_TRUTH)?;
        let victim: Option<TrainReport> = dir.read_json(files::TRAIN_REPORT, "train").ok();
        let out = run_attack(&cfg, &log, &truth, victim.as_ref(), choice, view)?;
        for ex in &out.extracted {
            ex.write_csv(dir.create(&files::extracted_for(ex.heuristic))?)?;
            if ex.heuristic == out.summary.primary {
                ex.write_csv(dir.create(files::EXTRACTED)?)?;
            }
        }
        dir.write_json(files::ATTACK, &out.summary)?;
        Ok(out.summary)
    })?;
    write_report(&dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub report: RefineReport,
    pub n_points: usize,
    pub n_kept: usize,
    pub n_relabeled: usize,
    pub n_pruned: usize,
    pub wrong_before: usize,
    pub wrong_after: usize,
    /// (before − after) / before; 0 when nothing was wrong.
    pub wrong_reduction: f64,
    pub pruned_fraction: f64,
}

fn summarize_refinement(report: RefineReport, points: &[crate::refinery::RefinedPoint], truth: &GroundTruth) -> RefineSummary {
    let wrong_before = truth.count_wrong(points.iter().map(|p| (p.angles.as_slice(), p.original_label)));
    let wrong_after = truth.count_wrong(
        points
            .iter()
            .filter_map(|p| p.final_label.map(|l| (p.angles.as_slice(), l))),
    );
    let n_points = points.len();
    let n_pruned = points.iter().filter(|p| p.final_label.is_none()).count();
    let n_relabeled = points
        .iter()
        .filter(|p| p.action == crate::refinery::Action::Relabeled)
        .count();
    RefineSummary {
        report,
        n_points,
        n_kept: n_points - n_pruned,
        n_relabeled,
        n_pruned,
        wrong_before,
        wrong_after,
        wrong_reduction: if wrong_before == 0 {
            0.0
        } else {
            (wrong_before as f64 - wrong_after as f64) / wrong_before as f64
        },
        pruned_fraction: if n_points == 0 { 0.0 } else { n_pruned as f64 / n_points as f64 },
    }
}

/// Relabels or prunes the primary extraction with the k-fold ensemble.
pub fn cmd_refine(run_dir: &Path) -> Result<RefineSummary> {
    let dir = RunDir::open_existing(run_dir)?;
    let cfg = dir.config()?;
    let summary = timed(&dir, "refine", || {
        let attack: AttackSummary = dir.read_json(files::ATTACK, "attack")?;
        let ex = ExtractedDataset::read_csv(dir.reader(files::EXTRACTED, "attack")?, attack.primary, attack.view)?;
        if ex.is_empty() {
            return Err(PipelineError::Data(format!("{} has no points", dir.path(files::EXTRACTED).display())));
        }
        let points: Vec<(Vec<f64>, usize)> = ex.points.into_iter().map(|p| (p.angles, p.label)).collect();
        let report = refine(&points, cfg.qnn.n_classes, &cfg.refine, &cfg.classifiers, cfg.qnn.execution)?;
        for it in &report.iterations {
            if it.relabeled + it.pruned != it.flagged {
                return Err(PipelineError::Invariant(format!(
                    "iteration {}: relabeled {} + pruned {} != flagged {}",
                    it.iteration, it.relabeled, it.pruned, it.flagged
                )));
            }
        }
        report.write_csv(dir.create(files::REFINED)?)?;
        let truth = dir.truth(files::GROUND_TRUTH)?;
        let points = report.points.clone();
        let summary = summarize_refinement(report, &points, &truth);
        dir.write_json(files::REFINE_REPORT, &summary)?;
        Ok(summary)
    })?;
    write_report(&dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneReport {
    pub clone: TrainReport,
    pub n_train: usize,
    pub victim_train_accuracy: Option<f64>,
    pub victim_test_accuracy: Option<f64>,
    pub clone_train_accuracy: Option<f64>,
    pub clone_test_accuracy: Option<f64>,
    /// victim − clone test accuracy.
    pub test_accuracy_gap: Option<f64>,
}

/// Trains a fresh model of the victim's architecture on the refined set
/// and scores it on the victim's test split.
pub fn cmd_clone(run_dir: &Path) -> Result<CloneReport> {
    let dir = RunDir::open_existing(run_dir)?;
    let cfg = dir.config()?;
    let report = timed(&dir, "clone", || {
        let refined = read_points_csv(dir.reader(files::REFINED, "refine")?)?;
        let test = dir.truth(files::TEST_SPLIT)?;
        let c = cfg.qnn.n_classes;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in refined.iter().filter(|p| p.final_label.is_some()) {
            features.push(p.angles.clone());
            labels.push(p.final_label.expect("filtered"));
        }
        let present: BTreeSet<usize> = labels.iter().copied().collect();
        if present.len() != c || labels.iter().any(|&l| l >= c) {
            return Err(PipelineError::Data(format!(
                "class-count mismatch: refined data covers classes {present:?}, model expects {c}"
            )));
        }
        let n_train = features.len();
        for (a, l) in test.rows() {
            features.push(a.clone());
            labels.push(*l);
        }
        let n = features.len();
        let ds = Dataset::prescaled(features, labels, c, (0..n_train).collect(), (n_train..n).collect())?;
        let mut model = QnnModel::new(cfg.qnn.clone())?;
        let clone = train(&mut model, &ds, None)?;
        write_metrics_csv(&clone, dir.create(files::CLONE_METRICS)?)?;
        let victim: Option<TrainReport> = dir.read_json(files::TRAIN_REPORT, "train").ok();
        let victim_test_accuracy = victim.as_ref().and_then(|v| v.final_test_accuracy);
        let clone_test_accuracy = clone.final_test_accuracy;
        let report = CloneReport {
            n_train,
            victim_train_accuracy: victim.as_ref().and_then(TrainReport::final_train_accuracy),
            victim_test_accuracy,
            clone_train_accuracy: clone.final_train_accuracy(),
            clone_test_accuracy,
            test_accuracy_gap: victim_test_accuracy.zip(clone_test_accuracy).map(|(v, c)| v - c),
            clone,
        };
        dir.write_json(files::CLONE_REPORT, &report)?;
        Ok(report)
    })?;
    write_report(&dir)?;
    Ok(report)
}

/// Trains the defended model and compares the adversary against the
/// undefended victim. Runs `train` first when the directory has no victim.
pub fn cmd_defend(config: Option<&RunConfig>, run_dir: &Path, alpha: Option<f64>) -> Result<DefenseReport> {
    let cfg_path = run_dir.join(files::CONFIG);
    if !run_dir.join(files::VICTIM_LOG).is_file() || !cfg_path.is_file() {
        let cfg = config.ok_or_else(|| PipelineError::Config("no victim in the run directory and no config given".into()))?;
        cmd_train(cfg, run_dir)?;
    }
    let dir = RunDir::open_existing(run_dir)?;
    let cfg = dir.config()?;
    let mut def = match (&cfg.defense, alpha) {
        (Some(d), _) => d.clone(),
        (None, Some(_)) => DefenseConfig::default(),
        (None, None) => {
            return Err(PipelineError::Config(
                "config has no defense section; add one or pass --alpha".into(),
            ))
        }
    };
    if let Some(a) = alpha {
        def.alpha = a;
    }
    let dcfg = make_defended_config(&cfg.qnn, &def)?;
    let report = timed(&dir, "defend", || {
        let ds = cfg.prepare_dataset()?;
        let mut model = QnnModel::new(dcfg.clone())?;
        let mut log = LogStore::new();
        let defended = train(&mut model, &ds, Some(&mut log))?;
        log.write_jsonl(dir.create(files::DEFENDED_LOG)?)?;
        write_metrics_csv(&defended, dir.create(files::DEFENDED_METRICS)?)?;
        dir.write_text(files::DEFENDED_CHECKPOINT, &(Checkpoint::from_model(&model).to_json() + "\n"))?;
        let baseline_log = dir.log(files::VICTIM_LOG, "train")?;
        let baseline: TrainReport = dir.read_json(files::TRAIN_REPORT, "train")?;
        let truth = dir.truth(files::GROUND_TRUTH)?;
        let report = evaluate_defense(&log, &baseline_log, &truth, &dcfg, Some((&defended, &baseline)), cfg.qnn.execution)?;
        dir.write_json(files::DEFENSE_REPORT, &report)?;
        Ok(report)
    })?;
    write_report(&dir)?;
    Ok(report)
}

/// Everything the run directory holds, merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub seed: u64,
    pub victim: Option<TrainReport>,
    pub attack: Option<AttackSummary>,
    pub refine: Option<RefineSummary>,
    pub clone: Option<CloneReport>,
    pub defense: Option<DefenseReport>,
    pub missing_stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub report: RunReport,
    pub plots: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn optional<T: DeserializeOwned>(dir: &RunDir, name: &str, stage: &'static str) -> Result<Option<T>> {
    if dir.exists(name) {
        dir.read_json(name, stage).map(Some)
    } else {
        Ok(None)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_plot(dir: &RunDir, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf> {
    let rel = format!("{}/{name}", files::PLOTS);
    let mut w = csv::Writer::from_writer(dir.create(&rel)?);
    let err = |e: csv::Error| PipelineError::Data(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| io_err(&dir.path(&rel), e))?;
    Ok(dir.path(&rel))
}

fn build_report(dir: &RunDir) -> Result<ReportOutcome> {
    let cfg = dir.config()?;
    let victim: Option<TrainReport> = optional(dir, files::TRAIN_REPORT, "train")?;
    let stored_attack: Option<AttackSummary> = optional(dir, files::ATTACK, "attack")?;
    let stored_refine: Option<RefineSummary> = optional(dir, files::REFINE_REPORT, "refine")?;
    let clone: Option<CloneReport> = optional(dir, files::CLONE_REPORT, "clone")?;
    let defense: Option<DefenseReport> = optional(dir, files::DEFENSE_REPORT, "defend")?;

    // accuracies are recomputed from the raw log and refined.csv
    let attack = match &stored_attack {
        Some(a) => {
            let log = dir.log(files::VICTIM_LOG, "train")?;
            let truth = dir.truth(files::GROUND_TRUTH)?;
            let fresh = run_attack(&cfg, &log, &truth, victim.as_ref(), a.heuristic, a.view)?.summary;
            if &fresh != a {
                return Err(PipelineError::Invariant(format!(
                    "{} disagrees with recomputation from {}",
                    files::ATTACK,
                    files::VICTIM_LOG
                )));
            }
            Some(fresh)
        }
        None => None,
    };
    let refine = match stored_refine {
        Some(r) => {
            let points = read_points_csv(dir.reader(files::REFINED, "refine")?)?;
            let truth = dir.truth(files::GROUND_TRUTH)?;
            let fresh = summarize_refinement(r.report.clone(), &points, &truth);
            if fresh != r {
                return Err(PipelineError::Invariant(format!(
                    "{} disagrees with recomputation from {}",
                    files::REFINE_REPORT,
                    files::REFINED
                )));
            }
            Some(fresh)
        }
        None => None,
    };

    let mut missing = Vec::new();
    for (name, present) in [
        ("train", victim.is_some()),
        ("attack", attack.is_some()),
        ("refine", refine.is_some()),
        ("clone", clone.is_some()),
        ("defend", defense.is_some()),
    ] {
        if !present {
            missing.push(name.to_string());
        }
    }
    if missing.len() == 5 {
        return Err(PipelineError::Data(format!("no stage outputs found in {}", dir.root().display())));
    }
    let warnings = missing.iter().map(|s| format!("stage `{s}` has not been run")).collect();

    let mut plots = Vec::new();
    if let Some(a) = &attack {
        let mut rows: Vec<Vec<String>> = Vec::new();
        for r in a.accuracies.iter().chain(&a.alternate_view_accuracies) {
            rows.push(vec![r.heuristic.to_string(), r.view.to_string(), r.accuracy.to_string()]);
        }
        plots.push(write_plot(dir, files::PLOT_HEURISTICS, &["heuristic", "view", "accuracy"], rows)?);
        let rows = a
            .trend
            .iter()
            .map(|t| {
                vec![
                    t.epoch.to_string(),
                    t.victim_train_accuracy.to_string(),
                    t.majority.to_string(),
                    t.wlinear.to_string(),
                    t.wexp.to_string(),
                ]
            })
            .collect();
        plots.push(write_plot(
            dir,
            files::PLOT_TREND,
            &["epoch", "victim_train_accuracy", "majority", "wlinear", "wexp"],
            rows,
        )?);
    }
    if let Some(r) = &refine {
        let rows = vec![
            vec!["wrong_labels".into(), r.wrong_before.to_string(), r.wrong_after.to_string()],
            vec!["points".into(), r.n_points.to_string(), r.n_kept.to_string()],
        ];
        plots.push(write_plot(dir, files::PLOT_REFINEMENT, &["quantity", "before", "after"], rows)?);
    }
    if let Some(v) = &victim {
        let rows = v
            .epochs
            .iter()
            .map(|m| {
                let c = clone.as_ref().and_then(|c| c.clone.epochs.iter().find(|x| x.epoch == m.epoch));
                vec![
                    m.epoch.to_string(),
                    m.train_accuracy.to_string(),
                    fmt_opt(m.test_accuracy),
                    fmt_opt(c.map(|x| x.train_accuracy)),
                    fmt_opt(c.and_then(|x| x.test_accuracy)),
                ]
            })
            .collect();
        plots.push(write_plot(
            dir,
            files::PLOT_CLONE,
            &["epoch", "victim_train", "victim_test", "clone_train", "clone_test"],
            rows,
        )?);
    }
    if let Some(d) = &defense {
        let mut rows = vec![vec![
            "user_accuracy".into(),
            d.baseline_user_accuracy.to_string(),
            d.user_accuracy.to_string(),
        ]];
        for c in &d.adversary {
            rows.push(vec![
                format!("adversary_{}", c.heuristic),
                c.baseline_accuracy.to_string(),
                c.defended_accuracy.to_string(),
            ]);
        }
        plots.push(write_plot(dir, files::PLOT_DEFENSE, &["series", "baseline", "defended"], rows)?);
    }

    let report = RunReport {
        dataset: cfg.dataset.name(),
        seed: cfg.seed,
        victim,
        attack,
        refine,
        clone,
        defense,
        missing_stages: missing,
    };
    dir.write_json(files::REPORT, &report)?;
    Ok(ReportOutcome { report, plots, warnings })
}

fn write_report(dir: &RunDir) -> Result<()> {
    build_report(dir).map(|_| ())
}

/// Merges stage outputs into `report.json` and writes the plot CSVs.
pub fn cmd_report(run_dir: &Path) -> Result<ReportOutcome> {
    if !run_dir.join(files::CONFIG).is_file() {
        return Err(PipelineError::Data(format!("no stage outputs found in {}", run_dir.display())));
    }
    let dir = RunDir::open_existing(run_dir)?;
    build_report(&dir)
}

/// Runs every stage in order.
pub fn run_all(config: &RunConfig, run_dir: &Path) -> Result<ReportOutcome> {
    cmd_train(config, run_dir)?;
    cmd_attack(run_dir, AttackOptions::default())?;
    cmd_refine(run_dir)?;
    cmd_clone(run_dir)?;
    if config.defense.is_some() {
        cmd_defend(None, run_dir, None)?;
    }
    cmd_report(run_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> RunConfig {
        let mut cfg = RunConfig::iris(seed);
        cfg.dataset = DatasetSpec::Blobs {
            n: 60,
            d: 2,
            n_classes: 2,
            spread: 0.3,
        };
        cfg.n_train = 40;
        cfg.n_test = 20;
        cfg.qnn = QnnConfig {
            epochs: 3,
            lr: 0.05,
            batch_size: 8,
            ..QnnConfig::undefended(2, 1, 2, seed)
        };
        cfg.defense = None;
        cfg.refine.k_values = vec![2, 3];
        cfg
    }

    #[test]
    fn config_round_trip_and_checks() {
        let cfg = RunConfig::iris(4);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let err = RunConfig::from_json(r#"{"dataset":{"kind":"iris"},"n_train":90,"n_test":60}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let mut bad = cfg.clone();
        bad.dataset = DatasetSpec::Csv {
            path: "/nonexistent/data.csv".into(),
            label_column: "label".into(),
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("/nonexistent/data.csv"), "{msg}");

        let mut vacuous = cfg.clone();
        vacuous.defense = Some(DefenseConfig {
            user_qubits: Some(vec![0, 1, 2, 3]),
            ..DefenseConfig::default()
        });
        assert_eq!(vacuous.validate().unwrap_err().exit_code(), 2);
        assert_eq!("all".parse::<HeuristicChoice>().unwrap().heuristics().len(), 3);
    }

    #[test]
    fn lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::open(tmp.path()).unwrap();
        assert!(matches!(RunDir::open(tmp.path()), Err(PipelineError::Locked(_))));
        drop(a);
        assert!(RunDir::open(tmp.path()).is_ok());
    }

    #[test]
    fn small_pipeline() {
        let tmp = tempfile::tempdir().unwrap();
        let run = tmp.path().join("run");
        let cfg = small(1);
        let train_report = cmd_train(&cfg, &run).unwrap();
        assert_eq!(train_report.epochs.len(), 3);
        let log = LogStore::read_jsonl(BufReader::new(File::open(run.join(files::VICTIM_LOG)).unwrap())).unwrap();
        assert_eq!(log.n_records(), 3 * 40);

        let out = cmd_report(&run).unwrap();
        assert_eq!(out.plots.len(), 1);
        assert_eq!(out.warnings.len(), 4);

        let attack = cmd_attack(&run, AttackOptions::default()).unwrap();
        assert_eq!(attack.accuracies.len(), 3);
        assert_eq!(attack.trend.len(), 3);
        let refined = cmd_refine(&run).unwrap();
        assert_eq!(refined.report.config.k_values, vec![2, 3]);
        let clone = cmd_clone(&run).unwrap();
        assert_eq!(clone.clone.epochs.len(), 3);
        let out = cmd_report(&run).unwrap();
        assert_eq!(out.plots.len(), 4);
        assert_eq!(out.report.missing_stages, vec!["defend".to_string()]);
        assert!(!run.join(files::LOCK).exists());
    }

    #[test]
    fn stage_order_is_enforced() {
        let tmp = tempfile::tempdir().unwrap();
        let run = tmp.path().join("r");
        assert_eq!(cmd_report(&run).unwrap_err().exit_code(), 3);
        cmd_train(&small(2), &run).unwrap();
        let err = cmd_refine(&run).unwrap_err();
        assert!(matches!(err, PipelineError::Missing { stage: "attack", .. }), "{err}");
        let err = cmd_defend(None, &run, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
