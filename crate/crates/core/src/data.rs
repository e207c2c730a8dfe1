//! Datasets: CSV ingestion, angle scaling, stratified splits, and synthetic
//! Gaussian blobs.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

const IRIS_CSV: &str = include_str!("../data/iris.csv");

/// Largest representable angle below 2π.
pub const MAX_ANGLE: f64 = TAU.next_down();

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: non-numeric value {value:?} in column {column:?}")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("dataset file is empty")]
    Empty,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("feature rows have inconsistent widths ({expected} vs {got})")]
    Ragged { expected: usize, got: usize },
    #[error("split asks for {requested} samples but only {available} exist")]
    TooFewSamples { requested: usize, available: usize },
    #[error("class {class} has {available} samples, stratified split needs {needed}")]
    InsufficientClass { class: usize, available: usize, needed: usize },
    #[error("train split is empty")]
    EmptyTrain,
    #[error("dataset is already scaled; split before scaling")]
    AlreadyScaled,
    #[error("invalid blob parameters: {0}")]
    InvalidBlobs(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Per-feature min/max fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Scaler {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut mins = vec![f64::INFINITY; width];
        let mut maxs = vec![f64::NEG_INFINITY; width];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Self { mins, maxs }
    }

    /// Maps a raw row into [0, 2π). Constant features map to π.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(&x, (&lo, &hi))| {
                if hi <= lo {
                    PI
                } else {
                    (TAU * (x - lo) / (hi - lo)).clamp(0.0, MAX_ANGLE)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scaling {
    Raw,
    Fitted(Scaler),
    /// Rows already hold angles (e.g. an extracted dataset).
    Prescaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    class_ids: Vec<i64>,
    feature_names: Vec<String>,
    train: Vec<usize>,
    test: Vec<usize>,
    scaling: Scaling,
}

impl Dataset {
    /// Builds an all-train dataset with dense labels in `0..n_classes`.
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(DataError::Ragged {
                expected: features.len(),
                got: labels.len(),
            });
        }
        let width = features.first().map_or(0, Vec::len);
        if let Some(row) = features.iter().find(|r| r.len() != width) {
            return Err(DataError::Ragged {
                expected: width,
                got: row.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DataError::LabelOutOfRange { label, n_classes });
        }
        Ok(Self {
            feature_names: (0..width).map(|j| format!("f{j}")).collect(),
            class_ids: (0..n_classes as i64).collect(),
            train: (0..features.len()).collect(),
            test: Vec::new(),
            scaling: Scaling::Raw,
            features,
            labels,
            n_classes,
        })
    }

    /// Angle-valued rows with explicit train/test partitions, no rescaling.
    pub fn prescaled(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let mut ds = Self::new(features, labels, n_classes)?;
        let n = ds.len();
        if let Some(&i) = train.iter().chain(&test).find(|&&i| i >= n) {
            return Err(DataError::TooFewSamples {
                requested: i + 1,
                available: n,
            });
        }
        ds.train = train;
        ds.test = test;
        ds.scaling = Scaling::Prescaled;
        Ok(ds)
    }

    /// The 150-sample Iris set (4 features, 3 classes).
    pub fn iris() -> Self {
        Self::from_csv_reader(IRIS_CSV.as_bytes(), "label").expect("bundled iris parses")
    }

    pub fn load_csv(path: &Path, label_column: &str) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_reader(file, label_column)
    }

    /// Parses a headed CSV; every column except `label_column` is a feature.
    /// Integer labels are re-indexed densely in ascending id order.
    pub fn from_csv_reader<R: Read>(reader: R, label_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(DataError::Empty);
        }
        let label_idx = header
            .iter()
            .position(|h| h.trim() == label_column)
            .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
        let feature_names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label_idx)
            .map(|(_, h)| h.trim().to_string())
            .collect();

        let mut features = Vec::new();
        let mut raw_labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                DataError::Malformed {
                    line,
                    message: e.to_string(),
                }
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != header.len() {
                return Err(DataError::Malformed {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let mut row = Vec::with_capacity(feature_names.len());
            for (j, field) in rec.iter().enumerate() {
                let field = field.trim();
                if j == label_idx {
                    let label: i64 = field.parse().map_err(|_| DataError::NonNumeric {
                        line,
                        column: label_column.to_string(),
                        value: field.to_string(),
                    })?;
                    raw_labels.push(label);
                } else {
                    let v: f64 = field
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| DataError::NonNumeric {
                            line,
                            column: header[j].to_string(),
                            value: field.to_string(),
                        })?;
                    row.push(v);
                }
            }
            features.push(row);
        }
        if features.is_empty() {
            return Err(DataError::Empty);
        }

        let ids: BTreeMap<i64, usize> = {
            let mut uniq: Vec<i64> = raw_labels.clone();
            uniq.sort_unstable();
            uniq.dedup();
            uniq.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
        };
        let labels = raw_labels.iter().map(|id| ids[id]).collect();
        let mut ds = Self::new(features, labels, ids.len())?;
        ds.class_ids = ids.into_keys().collect();
        ds.feature_names = feature_names;
        Ok(ds)
    }

    /// Writes features (shortest round-trip decimal) and original class ids.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, &label) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
            rec.push(self.class_ids[label].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(self.feature_names.len(), Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn is_angle_encoded(&self) -> bool {
        !matches!(self.scaling, Scaling::Raw)
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}

/// Fits a min-max scaler on the train split and maps every row into
/// [0, 2π). A dataset that is already angle-encoded is returned unchanged.
pub fn scale_to_angle(mut ds: Dataset) -> Result<Dataset> {
    if ds.is_angle_encoded() {
        return Ok(ds);
    }
    if ds.train.is_empty() {
        return Err(DataError::EmptyTrain);
    }
    let scaler = Scaler::fit(ds.train.iter().map(|&i| ds.features[i].as_slice()), ds.n_features());
    for row in &mut ds.features {
        *row = scaler.transform(row);
    }
    ds.scaling = Scaling::Fitted(scaler);
    Ok(ds)
}

/// Largest-remainder apportionment of `total` across `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut rema: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(c, &w)| ((total * w) % sum, c))
        .collect();
    // largest remainder first, lowest class on ties
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<usize>();
    for &(_, c) in rema.iter().take(short) {
        out[c] += 1;
    }
    out
}

/// Seeded stratified train/test split.
pub fn split(mut ds: Dataset, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    if ds.is_angle_encoded() {
        return Err(DataError::AlreadyScaled);
    }
    let n = ds.len();
    if n_train + n_test > n {
        return Err(DataError::TooFewSamples {
            requested: n_train + n_test,
            available: n,
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let train_q = apportion(n_train, &sizes);
    let test_q = apportion(n_test, &sizes);

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n_test);
    for (c, members) in by_class.iter_mut().enumerate() {
        let needed = train_q[c] + test_q[c];
        if needed > members.len() {
            return Err(DataError::InsufficientClass {
                class: c,
                available: members.len(),
                needed,
            });
        }
        members.shuffle(&mut stream_rng(seed, &[0x5117, c as u64]));
        train.extend_from_slice(&members[..train_q[c]]);
        test.extend_from_slice(&members[train_q[c]..needed]);
    }
    train.sort_unstable();
    test.sort_unstable();
    ds.train = train;
    ds.test = test;
    Ok(ds)
}

/// Isotropic Gaussian clusters around seeded centers in [-5, 5]^d.
/// Labels cycle through the classes, so class sizes differ by at most one.
pub fn make_blobs(n: usize, d: usize, n_classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(DataError::InvalidBlobs("need at least 2 classes".into()));
    }
    if d == 0 || n == 0 {
        return Err(DataError::InvalidBlobs("n and d must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::InvalidBlobs(format!("spread {spread} must be finite and >= 0")));
    }
    let mut rng = stream_rng(seed, &[0xb10b]);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let features = labels
        .iter()
        .map(|&l| {
            centers[l]
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + spread * z
                })
                .collect()
        })
        .collect();
    Dataset::new(features, labels, n_classes)
}
