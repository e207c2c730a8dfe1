//! k-fold ensemble refinement of an extracted dataset.
//!
//! Each classifier is fitted out-of-fold for several k and its probabilities
//! averaged. A point is flagged when every classifier disagrees with its
//! label; flagged points are relabeled when the classifiers agree on a
//! replacement with enough mean confidence, and pruned otherwise.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{try_map_indexed, Execution};
use crate::qnn::argmax;
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("cannot split {n} points into {k} folds")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    BadK(usize),
    #[error("confidence threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("need at least 2 classifiers, got {0}")]
    TooFewClassifiers(usize),
    #[error("k = {k}: a training partition misses class {class} even after resampling")]
    DegenerateFolds { k: usize, class: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("invalid classifier: {0}")]
    BadClassifier(String),
    #[error("refinement input is empty")]
    Empty,
    #[error("points have inconsistent widths")]
    Ragged,
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RefineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    /// Multinomial logistic regression, full-batch gradient descent.
    LogisticRegression { lr: f64, epochs: usize },
    /// Probability is the vote share among the k nearest training points.
    Knn { k: usize },
    /// One tanh hidden layer, softmax output, full-batch gradient descent.
    Mlp { hidden: usize, lr: f64, epochs: usize },
}

impl ClassifierSpec {
    pub fn logistic() -> Self {
        Self::LogisticRegression { lr: 0.5, epochs: 300 }
    }

    pub fn knn() -> Self {
        Self::Knn { k: 5 }
    }

    pub fn mlp() -> Self {
        Self::Mlp {
            hidden: 32,
            lr: 0.2,
            epochs: 400,
        }
    }

    pub fn default_ensemble() -> Vec<Self> {
        vec![Self::logistic(), Self::knn(), Self::mlp()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RefineError::BadClassifier(m.into()));
        match *self {
            Self::LogisticRegression { lr, .. } | Self::Mlp { lr, .. } if !(lr > 0.0 && lr.is_finite()) => {
                bad("learning rate must be positive")
            }
            Self::Knn { k: 0 } => bad("knn needs k >= 1"),
            Self::Mlp { hidden: 0, .. } => bad("mlp needs a hidden layer"),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LogisticRegression { .. } => "logistic_regression",
            Self::Knn { .. } => "knn",
            Self::Mlp { .. } => "mlp",
        }
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub k_values: Vec<usize>,
    pub confidence_threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl RefineConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            k_values: vec![5, 7, 10, 15],
            confidence_threshold: 0.8,
            max_iterations: 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(RefineError::BadThreshold(self.confidence_threshold));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k < 2) {
            return Err(RefineError::BadK(k));
        }
        if self.k_values.is_empty() {
            return Err(RefineError::BadK(0));
        }
        Ok(())
    }
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Seeded shuffle of `0..n` cut into `k` folds whose sizes differ by at
/// most one (larger folds first). Each fold is sorted.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(RefineError::BadK(k));
    }
    if k > n {
        return Err(RefineError::TooFewPoints { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &[0xf0, n as u64, k as u64]));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[&[f64]]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for row in x {
            for ((s, v), m) in scale.iter_mut().zip(*row).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

enum Fitted<'a> {
    Logistic {
        std: Standardizer,
        w: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    Knn {
        k: usize,
        x: &'a [&'a [f64]],
        y: &'a [usize],
        n_classes: usize,
    },
    Mlp {
        std: Standardizer,
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: Vec<f64>,
    },
}

fn affine(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

fn fit<'a>(spec: &ClassifierSpec, x: &'a [&'a [f64]], y: &'a [usize], n_classes: usize, seed: u64) -> Fitted<'a> {
    let d = x[0].len();
    let n = x.len() as f64;
    match *spec {
        ClassifierSpec::Knn { k } => Fitted::Knn { k, x, y, n_classes },
        ClassifierSpec::LogisticRegression { lr, epochs } => {
            let std = Standardizer::fit(x);
            let xs: Vec<Vec<f64>> = x.iter().map(|r| std.apply(r)).collect();
            let mut w = vec![vec![0.0; d]; n_classes];
            let mut b = vec![0.0; n_classes];
            for _ in 0..epochs {
                let mut gw = vec![vec![0.0; d]; n_classes];
                let mut gb = vec![0.0; n_classes];
                for (row, &label) in xs.iter().zip(y) {
                    let mut p = affine(&w, &b, row);
                    softmax_in_place(&mut p);
                    p[label] -= 1.0;
                    for c in 0..n_classes {
                        gb[c] += p[c] / n;
                        for j in 0..d {
                            gw[c][j] += p[c] * row[j] / n;
                        }
                    }
                }
                for c in 0..n_classes {
                    b[c] -= lr * gb[c];
                    for j in 0..d {
                        w[c][j] -= lr * gw[c][j];
                    }
                }
            }
            Fitted::Logistic { std, w, b }
        }
        ClassifierSpec::Mlp { hidden, lr, epochs } => {
            let std = Standardizer::fit(x);
            let xs: Vec<Vec<f64>> = x.iter().map(|r| std.apply(r)).collect();
            let mut rng = stream_rng(seed, &[0x31f]);
            let init = |fan_in: usize, rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..rows)
                    .map(|_| (0..cols).map(|_| dist.sample(rng)).collect())
                    .collect::<Vec<Vec<f64>>>()
            };
            let mut w1 = init(d, hidden, d, &mut rng);
            let mut b1 = vec![0.0; hidden];
            let mut w2 = init(hidden, n_classes, hidden, &mut rng);
            let mut b2 = vec![0.0; n_classes];
            for _ in 0..epochs {
                let mut gw1 = vec![vec![0.0; d]; hidden];
                let mut gb1 = vec![0.0; hidden];
                let mut gw2 = vec![vec![0.0; hidden]; n_classes];
                let mut gb2 = vec![0.0; n_classes];
                for (row, &label) in xs.iter().zip(y) {
                    let h: Vec<f64> = affine(&w1, &b1, row).into_iter().map(f64::tanh).collect();
                    let mut p = affine(&w2, &b2, &h);
                    softmax_in_place(&mut p);
                    p[label] -= 1.0;
                    let mut dh = vec![0.0; hidden];
                    for c in 0..n_classes {
                        gb2[c] += p[c] / n;
                        for j in 0..hidden {
                            gw2[c][j] += p[c] * h[j] / n;
                            dh[j] += p[c] * w2[c][j];
                        }
                    }
                    for j in 0..hidden {
                        let dz = dh[j] * (1.0 - h[j] * h[j]) / n;
                        gb1[j] += dz;
                        for i in 0..d {
                            gw1[j][i] += dz * row[i];
                        }
                    }
                }
                for c in 0..n_classes {
                    b2[c] -= lr * gb2[c];
                    for j in 0..hidden {
                        w2[c][j] -= lr * gw2[c][j];
                    }
                }
                for j in 0..hidden {
                    b1[j] -= lr * gb1[j];
                    for i in 0..d {
                        w1[j][i] -= lr * gw1[j][i];
                    }
                }
            }
            Fitted::Mlp { std, w1, b1, w2, b2 }
        }
    }
}

impl Fitted<'_> {
    fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        match self {
            Fitted::Logistic { std, w, b } => {
                let mut p = affine(w, b, &std.apply(row));
                softmax_in_place(&mut p);
                p
            }
            Fitted::Mlp { std, w1, b1, w2, b2 } => {
                let h: Vec<f64> = affine(w1, b1, &std.apply(row)).into_iter().map(f64::tanh).collect();
                let mut p = affine(w2, b2, &h);
                softmax_in_place(&mut p);
                p
            }
            Fitted::Knn { k, x, y, n_classes } => {
                let mut dist: Vec<(f64, usize)> = x
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (r.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum(), i))
                    .collect();
                dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let k = (*k).min(x.len());
                let mut p = vec![0.0; *n_classes];
                for &(_, i) in &dist[..k] {
                    p[y[i]] += 1.0 / k as f64;
                }
                p
            }
        }
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<()> {
    if x.is_empty() {
        return Err(RefineError::Empty);
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) || x.len() != y.len() {
        return Err(RefineError::Ragged);
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(RefineError::LabelOutOfRange { label, n_classes });
    }
    Ok(())
}

/// Class present in `y` but absent from some training partition.
fn missing_class(folds: &[Vec<usize>], y: &[usize]) -> Option<usize> {
    let present: BTreeSet<usize> = y.iter().copied().collect();
    for fold in folds {
        let held: BTreeSet<usize> = fold.iter().copied().collect();
        let train: BTreeSet<usize> = (0..y.len()).filter(|i| !held.contains(i)).map(|i| y[i]).collect();
        if let Some(&c) = present.iter().find(|c| !train.contains(c)) {
            return Some(c);
        }
    }
    None
}

/// Out-of-fold class probabilities: row i comes from the model trained
/// without i's fold.
pub fn fit_predict_oof(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    spec: &ClassifierSpec,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(x, y, n_classes)?;
    spec.validate()?;
    if k < 2 {
        return Err(RefineError::BadK(k));
    }
    let mut folds = kfold_indices(x.len(), k, seed)?;
    if missing_class(&folds, y).is_some() {
        folds = kfold_indices(x.len(), k, derive_seed(seed, &[1]))?;
        if let Some(class) = missing_class(&folds, y) {
            return Err(RefineError::DegenerateFolds { k, class });
        }
    }
    let mut out = vec![Vec::new(); x.len()];
    for (f, fold) in folds.iter().enumerate() {
        let mut held = vec![false; x.len()];
        for &i in fold {
            held[i] = true;
        }
        let train_x: Vec<&[f64]> = (0..x.len()).filter(|&i| !held[i]).map(|i| x[i].as_slice()).collect();
        let train_y: Vec<usize> = (0..x.len()).filter(|&i| !held[i]).map(|i| y[i]).collect();
        let model = fit(spec, &train_x, &train_y, n_classes, derive_seed(seed, &[k as u64, f as u64]));
        for &i in fold {
            out[i] = model.predict_proba(&x[i]);
        }
    }
    Ok(out)
}

/// One classifier's probabilities averaged over the k values, with argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierView {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ClassifierView {
    pub fn from_runs(runs: &[Vec<Vec<f64>>]) -> Self {
        let n = runs.first().map_or(0, Vec::len);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let width = runs[0][i].len();
                (0..width)
                    .map(|c| runs.iter().map(|r| r[i][c]).sum::<f64>() / runs.len() as f64)
                    .collect()
            })
            .collect();
        let labels = probs.iter().map(|p| argmax(p)).collect();
        Self { probs, labels }
    }
}

pub fn aggregate_classifier_view(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    spec: &ClassifierSpec,
    k_values: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<ClassifierView> {
    let runs = try_map_indexed(exec, k_values.len(), |i| fit_predict_oof(x, y, n_classes, spec, k_values[i], seed))?;
    Ok(ClassifierView::from_runs(&runs))
}

/// Views for every classifier, fitting all (classifier, k) pairs at once.
pub fn classifier_views(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    specs: &[ClassifierSpec],
    k_values: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<Vec<ClassifierView>> {
    let nk = k_values.len();
    let runs = try_map_indexed(exec, specs.len() * nk, |i| {
        fit_predict_oof(x, y, n_classes, &specs[i / nk], k_values[i % nk], seed)
    })?;
    Ok(runs.chunks(nk).map(ClassifierView::from_runs).collect())
}

/// Points every classifier assigns to a class other than their label.
pub fn flag_mislabeled(labels: &[usize], views: &[ClassifierView]) -> Result<Vec<usize>> {
    if views.len() < 2 {
        return Err(RefineError::TooFewClassifiers(views.len()));
    }
    Ok((0..labels.len())
        .filter(|&i| views.iter().all(|v| v.labels[i] != labels[i]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Relabel(usize),
    Prune,
}

/// Relabel when every classifier picks the same class and its mean
/// probability strictly exceeds `threshold`; prune otherwise.
pub fn update_or_prune(flagged: &[usize], views: &[ClassifierView], threshold: f64) -> Vec<(usize, Decision)> {
    flagged
        .iter()
        .map(|&i| {
            let first = views[0].labels[i];
            if views.iter().any(|v| v.labels[i] != first) {
                return (i, Decision::Prune);
            }
            let conf = views.iter().map(|v| v.probs[i][first]).sum::<f64>() / views.len() as f64;
            if conf > threshold {
                (i, Decision::Relabel(first))
            } else {
                (i, Decision::Prune)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Kept,
    Relabeled,
    Pruned,
}

impl Action {
    fn as_str(self) -> &'static str {
        match self {
            Self::Kept => "kept",
            Self::Relabeled => "relabeled",
            Self::Pruned => "pruned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub flagged: usize,
    pub relabeled: usize,
    pub pruned: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPoint {
    pub angles: Vec<f64>,
    pub original_label: usize,
    /// None once pruned.
    pub final_label: Option<usize>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub config: RefineConfig,
    pub classifiers: Vec<ClassifierSpec>,
    pub iterations: Vec<IterationStats>,
    /// Every input point is pruned.
    pub emptied: bool,
    /// Why a later iteration could not be cross-validated, if one could not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_early: Option<String>,
    #[serde(skip)]
    pub points: Vec<RefinedPoint>,
}

impl RefineReport {
    pub fn kept(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.points
            .iter()
            .filter_map(|p| p.final_label.map(|l| (p.angles.as_slice(), l)))
    }

    pub fn n_pruned(&self) -> usize {
        self.points.iter().filter(|p| p.action == Action::Pruned).count()
    }

    pub fn n_relabeled(&self) -> usize {
        self.points.iter().filter(|p| p.action == Action::Relabeled).count()
    }

    /// Header `a0,…,a{d-1},original_label,final_label,action`; the final
    /// label is empty for pruned points.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_points_csv(&self.points, w)
    }
}

pub fn write_points_csv<W: Write>(points: &[RefinedPoint], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let d = points.first().map_or(0, |p| p.angles.len());
    let mut header: Vec<String> = (0..d).map(|j| format!("a{j}")).collect();
    header.extend(["original_label", "final_label", "action"].map(String::from));
    w.write_record(&header)?;
    for p in points {
        let mut rec: Vec<String> = p.angles.iter().map(f64::to_string).collect();
        rec.push(p.original_label.to_string());
        rec.push(p.final_label.map(|l| l.to_string()).unwrap_or_default());
        rec.push(p.action.as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv<R: Read>(r: R) -> Result<Vec<RefinedPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let n = header.len();
    if n < 3 || header.iter().skip(n - 3).ne(["original_label", "final_label", "action"]) {
        return Err(RefineError::Corrupt {
            line: 1,
            message: "expected trailing original_label,final_label,action columns".into(),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |m: String| RefineError::Corrupt { line, message: m };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let angles = rec
            .iter()
            .take(n - 3)
            .map(|f| f.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let original_label = rec[n - 3].parse().map_err(|_| bad(format!("bad label {:?}", &rec[n - 3])))?;
        let final_label = match &rec[n - 2] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(format!("bad label {s:?}")))?),
        };
        let action = match &rec[n - 1] {
            "kept" => Action::Kept,
            "relabeled" => Action::Relabeled,
            "pruned" => Action::Pruned,
            s => return Err(bad(format!("bad action {s:?}"))),
        };
        if (action == Action::Pruned) != final_label.is_none() {
            return Err(bad("final_label must be empty exactly for pruned points".into()));
        }
        points.push(RefinedPoint {
            angles,
            original_label,
            final_label,
            action,
        });
    }
    Ok(points)
}

/// Flag, then relabel or prune, until nothing is flagged or
/// `max_iterations` is reached. Features are never modified.
pub fn refine(
    points: &[(Vec<f64>, usize)],
    n_classes: usize,
    config: &RefineConfig,
    specs: &[ClassifierSpec],
    exec: Execution,
) -> Result<RefineReport> {
    config.validate()?;
    if points.is_empty() {
        return Err(RefineError::Empty);
    }
    if specs.len() < 2 {
        return Err(RefineError::TooFewClassifiers(specs.len()));
    }
    for s in specs {
        s.validate()?;
    }
    let x_all: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
    let original: Vec<usize> = points.iter().map(|p| p.1).collect();
    check_inputs(&x_all, &original, n_classes)?;

    let mut labels: Vec<Option<usize>> = original.iter().copied().map(Some).collect();
    let mut iterations = Vec::new();
    let mut stopped_early = None;
    for it in 1..=config.max_iterations {
        let active: Vec<usize> = (0..points.len()).filter(|&i| labels[i].is_some()).collect();
        if active.is_empty() {
            break;
        }
        let x: Vec<Vec<f64>> = active.iter().map(|&i| x_all[i].clone()).collect();
        let y: Vec<usize> = active.iter().map(|&i| labels[i].expect("active")).collect();
        let seed = derive_seed(config.seed, &[it as u64]);
        let views = match classifier_views(&x, &y, n_classes, specs, &config.k_values, seed, exec) {
            Ok(v) => v,
            // earlier relabels and prunes stand
            Err(e @ (RefineError::DegenerateFolds { .. } | RefineError::TooFewPoints { .. })) if it > 1 => {
                stopped_early = Some(format!("iteration {it}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let flagged = flag_mislabeled(&y, &views)?;
        let decisions = update_or_prune(&flagged, &views, config.confidence_threshold);
        let mut stats = IterationStats {
            iteration: it,
            flagged: flagged.len(),
            relabeled: 0,
            pruned: 0,
            remaining: 0,
        };
        for (local, d) in decisions {
            let i = active[local];
            match d {
                Decision::Relabel(c) => {
                    labels[i] = Some(c);
                    stats.relabeled += 1;
                }
                Decision::Prune => {
                    labels[i] = None;
                    stats.pruned += 1;
                }
            }
        }
        stats.remaining = labels.iter().filter(|l| l.is_some()).count();
        iterations.push(stats);
        if flagged.is_empty() {
            break;
        }
    }

    let points: Vec<RefinedPoint> = points
        .iter()
        .zip(&labels)
        .map(|((angles, orig), &fin)| RefinedPoint {
            angles: angles.clone(),
            original_label: *orig,
            final_label: fin,
            action: match fin {
                None => Action::Pruned,
                Some(l) if l != *orig => Action::Relabeled,
                Some(_) => Action::Kept,
            },
        })
        .collect();
    Ok(RefineReport {
        config: config.clone(),
        classifiers: specs.to_vec(),
        iterations,
        emptied: labels.iter().all(Option::is_none),
        stopped_early,
        points,
    })
}
