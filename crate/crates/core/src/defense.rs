//! Masking-label defense.
//!
//! The defended model gets `m` extra output classes and a secret measured
//! subset S. The cloud sees expectations on every qubit, and training
//! pushes a weight-free softmax over all of them towards an adversarial
//! target, so argmax over the full register no longer reveals the label.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{extract, AdversaryError, AdversaryView, Heuristic, LogStore};
use crate::exec::Execution;
use crate::qnn::{HeadKind, QnnConfig, QnnError, TrainReport};
use crate::truth::GroundTruth;

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("unknown adversarial target scheme {0:?} (expected constant_mask_class, label_permutation)")]
    UnknownScheme(String),
    #[error("defense needs at least one mask class")]
    NoMaskClasses,
    #[error("user subset of {subset} qubits leaves nothing hidden on a {n_qubits}-qubit register")]
    VacuousSubset { subset: usize, n_qubits: usize },
    #[error("base config is already defended")]
    AlreadyDefended,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("{0} log is empty")]
    MissingLog(&'static str),
    #[error(transparent)]
    Qnn(#[from] QnnError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

pub type Result<T> = std::result::Result<T, DefenseError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScheme {
    /// Every sample targets the first mask class C.
    #[default]
    ConstantMaskClass,
    /// Label y targets (y + 1) mod (C + m).
    LabelPermutation,
}

impl FromStr for TargetScheme {
    type Err = DefenseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant_mask_class" => Ok(Self::ConstantMaskClass),
            "label_permutation" => Ok(Self::LabelPermutation),
            other => Err(DefenseError::UnknownScheme(other.to_string())),
        }
    }
}

impl fmt::Display for TargetScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConstantMaskClass => "constant_mask_class",
            Self::LabelPermutation => "label_permutation",
        })
    }
}

pub fn assign_adversarial_targets(labels: &[usize], scheme: TargetScheme, n_classes: usize, n_mask: usize) -> Result<Vec<usize>> {
    if n_mask == 0 {
        return Err(DefenseError::NoMaskClasses);
    }
    labels
        .iter()
        .map(|&y| {
            if y >= n_classes {
                return Err(DefenseError::LabelOutOfRange { label: y, n_classes });
            }
            Ok(match scheme {
                TargetScheme::ConstantMaskClass => n_classes,
                TargetScheme::LabelPermutation => (y + 1) % (n_classes + n_mask),
            })
        })
        .collect()
}

fn default_alpha() -> f64 {
    1.0
}

fn default_mask() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    #[serde(default = "default_mask")]
    pub n_mask_classes: usize,
    /// Secret qubits the user's head reads; the first C qubits when absent.
    #[serde(default)]
    pub user_qubits: Option<Vec<usize>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub scheme: TargetScheme,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            n_mask_classes: 1,
            user_qubits: None,
            alpha: 1.0,
            scheme: TargetScheme::default(),
        }
    }
}

/// Defended copy of an undefended config: C + m outputs through a linear
/// head on S, every qubit published.
pub fn make_defended_config(base: &QnnConfig, def: &DefenseConfig) -> Result<QnnConfig> {
    if base.is_defended() {
        return Err(DefenseError::AlreadyDefended);
    }
    if def.n_mask_classes == 0 {
        return Err(DefenseError::NoMaskClasses);
    }
    let subset = def.user_qubits.clone().unwrap_or_else(|| (0..base.n_classes).collect());
    if subset.len() >= base.n_qubits {
        return Err(DefenseError::VacuousSubset {
            subset: subset.len(),
            n_qubits: base.n_qubits,
        });
    }
    let cfg = QnnConfig {
        n_mask_classes: def.n_mask_classes,
        measured_qubits: subset,
        head_kind: HeadKind::Linear,
        alpha: def.alpha,
        adversarial_scheme: def.scheme,
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicComparison {
    pub heuristic: Heuristic,
    pub baseline_accuracy: f64,
    pub defended_accuracy: f64,
    /// (baseline − defended) / baseline; 0 when the baseline is 0.
    pub relative_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub alpha: f64,
    pub n_mask_classes: usize,
    pub scheme: TargetScheme,
    /// User-view accuracy on the final logged epoch.
    pub user_accuracy: f64,
    pub baseline_user_accuracy: f64,
    pub user_accuracy_delta: f64,
    /// Extraction from every published expectation.
    pub adversary: Vec<HeuristicComparison>,
    /// Extra epochs the defended model needs to reach the baseline's final
    /// train accuracy; absent when it never gets there.
    pub overhead_epochs: Option<i64>,
}

impl DefenseReport {
    pub fn comparison(&self, h: Heuristic) -> Option<&HeuristicComparison> {
        self.adversary.iter().find(|c| c.heuristic == h)
    }
}

/// User-view accuracy of the last logged epoch, from the same records the
/// adversary sees.
fn final_user_accuracy(log: &LogStore, truth: &GroundTruth) -> Result<f64> {
    let last = log.epochs().last().ok_or(DefenseError::MissingLog("final epoch"))?;
    let mut points = Vec::with_capacity(last.records.len());
    for r in &last.records {
        let probs = r.class_probs.as_deref().ok_or(AdversaryError::MissingClassProbs)?;
        points.push((r.angles.as_slice(), crate::qnn::argmax(probs)));
    }
    Ok(truth.accuracy(points))
}

fn first_epoch_reaching(report: &TrainReport, target: f64) -> Option<usize> {
    report.epochs.iter().find(|m| m.train_accuracy >= target).map(|m| m.epoch)
}

/// Extra epochs for `defended` to match `baseline`'s final train accuracy.
pub fn overhead_epochs(defended: &TrainReport, baseline: &TrainReport) -> Option<i64> {
    let target = baseline.final_train_accuracy()?;
    let b = first_epoch_reaching(baseline, target)?;
    let d = first_epoch_reaching(defended, target)?;
    Some(d as i64 - b as i64)
}

/// Runs all three heuristics over every published qubit of both logs and
/// compares.
pub fn evaluate_defense(
    defended_log: &LogStore,
    baseline_log: &LogStore,
    truth: &GroundTruth,
    config: &QnnConfig,
    reports: Option<(&TrainReport, &TrainReport)>,
    exec: Execution,
) -> Result<DefenseReport> {
    if defended_log.is_empty() {
        return Err(DefenseError::MissingLog("defended"));
    }
    if baseline_log.is_empty() {
        return Err(DefenseError::MissingLog("baseline"));
    }
    let mut adversary = Vec::with_capacity(Heuristic::ALL.len());
    for h in Heuristic::ALL {
        let score = |log: &LogStore| -> Result<f64> {
            let total = log.last_epoch().unwrap_or(0);
            let ex = extract(log, h, AdversaryView::Expvals, None, total, exec)?;
            Ok(truth.accuracy(ex.points.iter().map(|p| (p.angles.as_slice(), p.label))))
        };
        let baseline_accuracy = score(baseline_log)?;
        let defended_accuracy = score(defended_log)?;
        let relative_drop = if baseline_accuracy > 0.0 {
            (baseline_accuracy - defended_accuracy) / baseline_accuracy
        } else {
            0.0
        };
        adversary.push(HeuristicComparison {
            heuristic: h,
            baseline_accuracy,
            defended_accuracy,
            relative_drop,
        });
    }
    let user_accuracy = final_user_accuracy(defended_log, truth)?;
    let baseline_user_accuracy = final_user_accuracy(baseline_log, truth)?;
    Ok(DefenseReport {
        alpha: config.alpha,
        n_mask_classes: config.n_mask_classes,
        scheme: config.adversarial_scheme,
        user_accuracy,
        baseline_user_accuracy,
        user_accuracy_delta: user_accuracy - baseline_user_accuracy,
        adversary,
        overhead_epochs: reports.and_then(|(d, b)| overhead_epochs(d, b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::Observation;
    use crate::qnn::EpochMetrics;

    #[test]
    fn target_schemes() {
        let t = assign_adversarial_targets(&[0, 1, 2], TargetScheme::ConstantMaskClass, 3, 1).unwrap();
        assert_eq!(t, vec![3, 3, 3]);
        let t = assign_adversarial_targets(&[2], TargetScheme::LabelPermutation, 3, 1).unwrap();
        assert_eq!(t, vec![3]);
        let t = assign_adversarial_targets(&[0, 1, 2, 3], TargetScheme::LabelPermutation, 4, 1).unwrap();
        assert_eq!(t, vec![1, 2, 3, 4]);
        assert!(matches!(
            assign_adversarial_targets(&[3], TargetScheme::ConstantMaskClass, 3, 1),
            Err(DefenseError::LabelOutOfRange { .. })
        ));
        assert!("random".parse::<TargetScheme>().is_err());
        assert_eq!("label_permutation".parse::<TargetScheme>().unwrap(), TargetScheme::LabelPermutation);
    }

    #[test]
    fn defended_config_shapes() {
        let base = QnnConfig::iris(1);
        let cfg = make_defended_config(&base, &DefenseConfig::default()).unwrap();
        assert_eq!(cfg.n_outputs(), 4);
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.published_qubits(), vec![0, 1, 2, 3]);
        assert_eq!(cfg.measured_qubits, vec![0, 1, 2]);

        let four = QnnConfig::undefended(8, 2, 4, 1);
        assert_eq!(make_defended_config(&four, &DefenseConfig::default()).unwrap().n_outputs(), 5);

        let vacuous = DefenseConfig {
            user_qubits: Some(vec![0, 1, 2, 3]),
            ..DefenseConfig::default()
        };
        assert!(matches!(
            make_defended_config(&base, &vacuous),
            Err(DefenseError::VacuousSubset { .. })
        ));
        assert!(matches!(make_defended_config(&cfg, &DefenseConfig::default()), Err(DefenseError::AlreadyDefended)));
    }

    fn report(accs: &[f64]) -> TrainReport {
        TrainReport {
            epochs: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| EpochMetrics {
                    epoch: i + 1,
                    loss: 0.0,
                    train_accuracy: a,
                    test_accuracy: None,
                })
                .collect(),
            ..TrainReport::default()
        }
    }

    #[test]
    fn overhead() {
        let base = report(&[0.5, 0.8, 0.9, 0.9]);
        assert_eq!(overhead_epochs(&report(&[0.4, 0.6, 0.7, 0.9]), &base), Some(1));
        assert_eq!(overhead_epochs(&report(&[0.9, 0.9, 0.9, 0.9]), &base), Some(-2));
        assert_eq!(overhead_epochs(&report(&[0.4, 0.6, 0.7, 0.8]), &base), None);
    }

    #[test]
    fn evaluation_on_synthetic_logs() {
        // baseline: expvals point at the label; defended: always at qubit 3.
        let truth = GroundTruth::new(vec![(vec![0.1], 0), (vec![0.2], 1), (vec![0.3], 2)]);
        let mut base = LogStore::new();
        let mut def = LogStore::new();
        for e in 1..=3 {
            for (a, y) in [(0.1, 0usize), (0.2, 1), (0.3, 2)] {
                let mut ev = vec![0.0; 3];
                ev[y] = 1.0;
                let probs = ev.clone();
                base.observe(e, Observation { angles: vec![a], expvals: ev.clone(), class_probs: Some(probs.clone()) }).unwrap();
                let mut dv = ev;
                dv.push(2.0);
                def.observe(e, Observation { angles: vec![a], expvals: dv, class_probs: Some(probs) }).unwrap();
            }
        }
        let cfg = make_defended_config(&QnnConfig::iris(0), &DefenseConfig::default()).unwrap();
        let r = evaluate_defense(&def, &base, &truth, &cfg, None, Execution::Sequential).unwrap();
        assert_eq!(r.user_accuracy, 1.0);
        assert_eq!(r.user_accuracy_delta, 0.0);
        let wexp = r.comparison(Heuristic::WeightedExp).unwrap();
        assert_eq!(wexp.baseline_accuracy, 1.0);
        assert_eq!(wexp.defended_accuracy, 0.0);
        assert_eq!(wexp.relative_drop, 1.0);
        assert!(matches!(
            evaluate_defense(&LogStore::new(), &base, &truth, &cfg, None, Execution::Sequential),
            Err(DefenseError::MissingLog(_))
        ));
    }
}
