//! The cloud provider's view of a training run.
//!
//! Every forward pass the victim submits is logged with its encoded angles
//! and the expectations returned to the user. Because the same encoded data
//! recurs each epoch, the log can be regrouped into per-point histories and
//! each point's label voted from its per-epoch guesses.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{try_map_indexed, Execution};
use crate::qnn::{argmax, ForwardRecord, TrainObserver};

/// Angle coordinates closer than this are the same encoded point.
pub const ANGLE_MATCH_TOL: f64 = 1e-9;

/// Fraction of the run after which exponential vote weights stop growing.
pub const ROLLOVER_PERCENTILE: u64 = 90;

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("log store is empty")]
    EmptyStore,
    #[error("epoch {got} observed after epoch {last}")]
    EpochOrder { last: usize, got: usize },
    #[error("assumed qubit subset is empty")]
    EmptySubset,
    #[error("assumed qubit {index} not among the {available} published expectations")]
    SubsetOutOfRange { index: usize, available: usize },
    #[error("record carries no class probabilities")]
    MissingClassProbs,
    #[error("history has no observations")]
    EmptyHistory,
    #[error("unknown heuristic {0:?} (expected majority, wlinear, wexp)")]
    UnknownHeuristic(String),
    #[error("unknown adversary view {0:?} (expected expvals, class_probs)")]
    UnknownView(String),
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AdversaryError>;

/// What the cloud sees for one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub angles: Vec<f64>,
    /// Expectations returned to the user, in published-qubit order.
    pub expvals: Vec<f64>,
    /// The victim's softmax output, for the stronger adversary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub records: Vec<Observation>,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    epoch: usize,
    #[serde(flatten)]
    obs: Observation,
}

/// Append-only, epoch-ordered log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogStore {
    epochs: Vec<EpochLog>,
}

impl LogStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, epoch: usize, record: Observation) -> Result<()> {
        match self.epochs.last_mut() {
            Some(last) if last.epoch == epoch => last.records.push(record),
            Some(last) if last.epoch > epoch => {
                return Err(AdversaryError::EpochOrder {
                    last: last.epoch,
                    got: epoch,
                })
            }
            _ => self.epochs.push(EpochLog {
                epoch,
                records: vec![record],
            }),
        }
        Ok(())
    }

    pub fn epochs(&self) -> &[EpochLog] {
        &self.epochs
    }

    pub fn n_records(&self) -> usize {
        self.epochs.iter().map(|e| e.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_records() == 0
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.epochs.last().map(|e| e.epoch)
    }

    /// The log as it stood after `epoch`.
    pub fn truncated(&self, epoch: usize) -> LogStore {
        LogStore {
            epochs: self.epochs.iter().filter(|e| e.epoch <= epoch).cloned().collect(),
        }
    }

    /// One JSON object per record: `{"epoch":…,"angles":[…],"expvals":[…],"class_probs":[…]}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.epochs {
            for obs in &e.records {
                let line = LogLine {
                    epoch: e.epoch,
                    obs: obs.clone(),
                };
                serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut store = LogStore::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| AdversaryError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            store.observe(parsed.epoch, parsed.obs).map_err(|e| AdversaryError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(store)
    }
}

impl TrainObserver for LogStore {
    fn on_epoch(&mut self, epoch: usize, records: &[ForwardRecord], published_qubits: &[usize]) {
        for rec in records {
            let obs = Observation {
                angles: rec.angles.clone(),
                expvals: published_qubits.iter().map(|&q| rec.expvals[q]).collect(),
                class_probs: Some(rec.user_probs.clone()),
            };
            // the trainer reports epochs in increasing order
            self.observe(epoch, obs).expect("trainer epochs are monotone");
        }
    }
}

/// Which signal the adversary turns into a per-epoch label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryView {
    /// Argmax over the returned per-qubit expectations.
    #[default]
    Expvals,
    /// Argmax over the victim's own softmax output.
    ClassProbs,
}

impl FromStr for AdversaryView {
    type Err = AdversaryError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expvals" => Ok(Self::Expvals),
            "class_probs" => Ok(Self::ClassProbs),
            other => Err(AdversaryError::UnknownView(other.to_string())),
        }
    }
}

impl fmt::Display for AdversaryView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Expvals => "expvals",
            Self::ClassProbs => "class_probs",
        })
    }
}

/// Class guess from one record: argmax over the expectations of
/// `assumed_qubits` (positions in the published vector). The class id is
/// the winner's position within `assumed_qubits`.
pub fn infer_epoch_label(record: &Observation, assumed_qubits: &[usize]) -> Result<usize> {
    if assumed_qubits.is_empty() {
        return Err(AdversaryError::EmptySubset);
    }
    let values = assumed_qubits
        .iter()
        .map(|&q| {
            record.expvals.get(q).copied().ok_or(AdversaryError::SubsetOutOfRange {
                index: q,
                available: record.expvals.len(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(argmax(&values))
}

fn guess(record: &Observation, view: AdversaryView, assumed_qubits: Option<&[usize]>) -> Result<usize> {
    match view {
        AdversaryView::Expvals => match assumed_qubits {
            Some(s) => infer_epoch_label(record, s),
            None => {
                let all: Vec<usize> = (0..record.expvals.len()).collect();
                infer_epoch_label(record, &all)
            }
        },
        AdversaryView::ClassProbs => record
            .class_probs
            .as_deref()
            .map(argmax)
            .ok_or(AdversaryError::MissingClassProbs),
    }
}

/// Observations of one encoded point across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTrace<'a> {
    pub angles: &'a [f64],
    /// (epoch, observation), at most one per epoch.
    pub observations: Vec<(usize, &'a Observation)>,
}

impl PointTrace<'_> {
    pub fn history(&self, view: AdversaryView, assumed_qubits: Option<&[usize]>) -> Result<PointHistory> {
        Ok(PointHistory {
            angles: self.angles.to_vec(),
            guesses: self
                .observations
                .iter()
                .map(|&(e, obs)| Ok((e, guess(obs, view, assumed_qubits)?)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Per-epoch label guesses for one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointHistory {
    pub angles: Vec<f64>,
    /// (1-based epoch, class).
    pub guesses: Vec<(usize, usize)>,
}

impl PointHistory {
    pub fn new(guesses: Vec<(usize, usize)>) -> Self {
        Self {
            angles: Vec::new(),
            guesses,
        }
    }
}

fn angles_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= ANGLE_MATCH_TOL)
}

fn angle_key(a: &[f64]) -> Vec<u64> {
    a.iter().map(|x| x.to_bits()).collect()
}

/// Regroups the log into per-point traces, in order of first appearance.
///
/// Records match when every angle agrees within [`ANGLE_MATCH_TOL`]. A
/// point repeated within one epoch (duplicate rows in the data) yields one
/// trace per copy.
pub fn group_points(store: &LogStore) -> Vec<PointTrace<'_>> {
    let mut traces: Vec<PointTrace<'_>> = Vec::new();
    let mut exact: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for e in store.epochs() {
        for obs in &e.records {
            let free = |t: &PointTrace<'_>| t.observations.last().is_none_or(|&(last, _)| last != e.epoch);
            let key = angle_key(&obs.angles);
            let hit = exact
                .get(&key)
                .and_then(|ids| ids.iter().copied().find(|&i| free(&traces[i])))
                .or_else(|| {
                    traces
                        .iter()
                        .position(|t| free(t) && angles_match(t.angles, &obs.angles))
                });
            let idx = match hit {
                Some(i) => i,
                None => {
                    traces.push(PointTrace {
                        angles: &obs.angles,
                        observations: Vec::new(),
                    });
                    traces.len() - 1
                }
            };
            exact.entry(key).or_default().push(idx);
            traces[idx].observations.push((e.epoch, obs));
        }
    }
    for ids in exact.values_mut() {
        ids.dedup();
    }
    traces
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heuristic {
    #[serde(rename = "majority")]
    Majority,
    #[serde(rename = "wlinear")]
    WeightedLinear,
    #[serde(rename = "wexp")]
    WeightedExp,
}

impl Heuristic {
    pub const ALL: [Heuristic; 3] = [Heuristic::Majority, Heuristic::WeightedLinear, Heuristic::WeightedExp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Majority => "majority",
            Self::WeightedLinear => "wlinear",
            Self::WeightedExp => "wexp",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Heuristic {
    type Err = AdversaryError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Self::Majority),
            "wlinear" | "weighted_linear" => Ok(Self::WeightedLinear),
            "wexp" | "weighted_exp" => Ok(Self::WeightedExp),
            other => Err(AdversaryError::UnknownHeuristic(other.to_string())),
        }
    }
}

/// Vote outcome: winning class and its share of the total weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub class: usize,
    pub margin: f64,
}

fn tally(history: &PointHistory, weight: impl Fn(usize) -> f64) -> Result<Vote> {
    if history.guesses.is_empty() {
        return Err(AdversaryError::EmptyHistory);
    }
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for &(epoch, class) in &history.guesses {
        *scores.entry(class).or_default() += weight(epoch);
    }
    let total: f64 = scores.values().sum();
    let (mut class, mut best) = (0, f64::NEG_INFINITY);
    for (&c, &s) in &scores {
        if s > best {
            class = c;
            best = s;
        }
    }
    Ok(Vote {
        class,
        margin: best / total,
    })
}

/// ceil(0.9 · total_epochs), at least 1.
pub fn rollover_epoch(total_epochs: usize) -> usize {
    let t = total_epochs as u64;
    (t * ROLLOVER_PERCENTILE).div_ceil(100).max(1) as usize
}

/// Weight 2^(min(e, R) − 1) for 1-based epoch e and rollover R.
pub fn exp_weight(epoch: usize, total_epochs: usize) -> f64 {
    let e = epoch.clamp(1, rollover_epoch(total_epochs));
    2f64.powi(e as i32 - 1)
}

pub fn vote(history: &PointHistory, heuristic: Heuristic, total_epochs: usize) -> Result<Vote> {
    match heuristic {
        Heuristic::Majority => tally(history, |_| 1.0),
        Heuristic::WeightedLinear => tally(history, |e| e as f64),
        Heuristic::WeightedExp => tally(history, |e| exp_weight(e, total_epochs)),
    }
}

/// Most frequent class, lowest class on ties.
pub fn majority_vote(history: &PointHistory) -> Result<usize> {
    vote(history, Heuristic::Majority, 1).map(|v| v.class)
}

/// Epoch e contributes weight e.
pub fn weighted_linear_vote(history: &PointHistory) -> Result<usize> {
    vote(history, Heuristic::WeightedLinear, 1).map(|v| v.class)
}

/// Weights double each epoch up to the rollover epoch, then stay flat.
pub fn weighted_exp_vote(history: &PointHistory, total_epochs: usize) -> Result<usize> {
    vote(history, Heuristic::WeightedExp, total_epochs).map(|v| v.class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedPoint {
    pub angles: Vec<f64>,
    pub label: usize,
    pub margin: f64,
}

/// The adversary's reconstructed training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedDataset {
    pub heuristic: Heuristic,
    pub view: AdversaryView,
    pub points: Vec<ExtractedPoint>,
}

impl ExtractedDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Header `a0,…,a{d-1},voted_label,margin`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let d = self.points.first().map_or(0, |p| p.angles.len());
        let mut header: Vec<String> = (0..d).map(|j| format!("a{j}")).collect();
        header.push("voted_label".into());
        header.push("margin".into());
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec: Vec<String> = p.angles.iter().map(f64::to_string).collect();
            rec.push(p.label.to_string());
            rec.push(p.margin.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, heuristic: Heuristic, view: AdversaryView) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let n = header.len();
        if n < 2 || &header[n - 2] != "voted_label" || &header[n - 1] != "margin" {
            return Err(AdversaryError::Corrupt {
                line: 1,
                message: "expected trailing voted_label,margin columns".into(),
            });
        }
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| AdversaryError::Corrupt {
                line,
                message: e.to_string(),
            })?;
            let bad = |m: String| AdversaryError::Corrupt { line, message: m };
            let angles = rec
                .iter()
                .take(n - 2)
                .map(|f| f.parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let label = rec[n - 2].parse().map_err(|_| bad(format!("bad label {:?}", &rec[n - 2])))?;
            let margin = rec[n - 1].parse().map_err(|_| bad(format!("bad margin {:?}", &rec[n - 1])))?;
            points.push(ExtractedPoint { angles, label, margin });
        }
        Ok(Self { heuristic, view, points })
    }
}

/// Groups the log, guesses a label per epoch, and votes per point.
/// `assumed_qubits` defaults to every published qubit.
pub fn extract(
    store: &LogStore,
    heuristic: Heuristic,
    view: AdversaryView,
    assumed_qubits: Option<&[usize]>,
    total_epochs: usize,
    exec: Execution,
) -> Result<ExtractedDataset> {
    if store.is_empty() {
        return Err(AdversaryError::EmptyStore);
    }
    let traces = group_points(store);
    let points = try_map_indexed(exec, traces.len(), |i| {
        let history = traces[i].history(view, assumed_qubits)?;
        let v = vote(&history, heuristic, total_epochs)?;
        Ok::<_, AdversaryError>(ExtractedPoint {
            angles: history.angles,
            label: v.class,
            margin: v.margin,
        })
    })?;
    Ok(ExtractedDataset { heuristic, view, points })
}
