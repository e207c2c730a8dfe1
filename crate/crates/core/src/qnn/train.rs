use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, argmax, forward_stream, param_shift_grad, BatchItem, DefendedLoss, ForwardRecord, Objective, QnnError,
    QnnModel, Result, StandardLoss,
};
use crate::data::Dataset;
use crate::defense::assign_adversarial_targets;
use crate::exec::try_map_indexed;
use crate::rng::stream_rng;

/// Receives the full training-set forward pass after every epoch.
pub trait TrainObserver {
    /// `published_qubits` lists the qubits whose expectations the cloud
    /// returns to the user.
    fn on_epoch(&mut self, epoch: usize, records: &[ForwardRecord], published_qubits: &[usize]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub final_test_accuracy: Option<f64>,
    pub records_emitted: usize,
}

impl TrainReport {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|m| m.train_accuracy)
    }
}

fn pass(model: &QnnModel, ds: &Dataset, rows: &[usize], tag: u64, epoch: usize) -> Result<Vec<ForwardRecord>> {
    try_map_indexed(model.config.execution, rows.len(), |i| {
        let row = rows[i];
        forward_stream(model, ds.row(row), &[tag, epoch as u64, row as u64])
    })
}

fn accuracy(records: &[ForwardRecord], rows: &[usize], labels: &[usize]) -> f64 {
    let hits = records
        .iter()
        .zip(rows)
        .filter(|(r, &row)| r.predicted_class == labels[row])
        .count();
    hits as f64 / rows.len() as f64
}

/// Mini-batch training for `config.epochs` epochs, continuing from the
/// model's current optimizer state.
///
/// Each epoch shuffles the training rows with a seeded stream, takes one
/// Adam step per batch, then runs a forward pass over the training rows in
/// index order and hands those records to `observer`.
pub fn train(
    model: &mut QnnModel,
    dataset: &Dataset,
    mut observer: Option<&mut dyn TrainObserver>,
) -> Result<TrainReport> {
    let cfg = model.config.clone();
    cfg.validate()?;
    let train_rows = dataset.train_indices();
    let test_rows = dataset.test_indices();
    if train_rows.is_empty() {
        return Err(QnnError::EmptyDataset);
    }
    if dataset.n_features() != cfg.n_qubits {
        return Err(QnnError::DatasetShape {
            expected: cfg.n_qubits,
            got: dataset.n_features(),
        });
    }
    let labels = dataset.labels();
    if let Some(&label) = train_rows.iter().chain(test_rows).map(|&r| &labels[r]).find(|&&l| l >= cfg.n_classes) {
        return Err(QnnError::LabelOutOfRange {
            label,
            n_classes: cfg.n_classes,
        });
    }

    let targets;
    let objective: Box<dyn Objective + '_> = if cfg.is_defended() {
        targets = assign_adversarial_targets(labels, cfg.adversarial_scheme, cfg.n_classes, cfg.n_mask_classes)
            .map_err(|e| QnnError::Config(e.to_string()))?;
        Box::new(DefendedLoss {
            labels,
            targets: &targets,
            alpha: cfg.alpha,
        })
    } else {
        Box::new(StandardLoss { labels })
    };

    let published = cfg.published_qubits();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        let mut order = train_rows.to_vec();
        order.shuffle(&mut stream_rng(cfg.seed, &[0x5u64 << 8, epoch as u64]));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<BatchItem<'_>> = chunk
                .iter()
                .map(|&row| BatchItem {
                    features: dataset.row(row),
                    row,
                })
                .collect();
            let grad = param_shift_grad(model, &batch, objective.as_ref(), &[0x6, epoch as u64, b as u64])?;
            let mut flat = model.params_flat();
            adam_step(&mut flat, &grad.grads, &mut model.optimizer, cfg.lr)?;
            model.set_params_flat(&flat)?;
        }

        let records = pass(model, dataset, train_rows, 0xfa, epoch)?;
        let mut loss = 0.0;
        for (rec, &row) in records.iter().zip(train_rows) {
            loss += objective.eval(model, &rec.expvals, row)?.value;
        }
        let test_accuracy = if test_rows.is_empty() {
            None
        } else {
            let test = pass(model, dataset, test_rows, 0x7e, epoch)?;
            Some(accuracy(&test, test_rows, labels))
        };
        report.epochs.push(EpochMetrics {
            epoch,
            loss: loss / train_rows.len() as f64,
            train_accuracy: accuracy(&records, train_rows, labels),
            test_accuracy,
        });
        report.records_emitted += records.len();
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_epoch(epoch, &records, &published);
        }
    }
    report.final_test_accuracy = report.epochs.last().and_then(|m| m.test_accuracy);
    Ok(report)
}

/// Predicted classes for `rows` under the current model.
pub fn predict(model: &QnnModel, dataset: &Dataset, rows: &[usize]) -> Result<Vec<usize>> {
    Ok(pass(model, dataset, rows, 0x9d, 0)?
        .into_iter()
        .map(|r| argmax(&r.user_probs))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, scale_to_angle, split};
    use crate::qnn::QnnConfig;

    struct Counter(usize, Vec<usize>);

    impl TrainObserver for Counter {
        fn on_epoch(&mut self, epoch: usize, records: &[ForwardRecord], _: &[usize]) {
            self.0 += records.len();
            self.1.push(epoch);
        }
    }

    fn tiny() -> Dataset {
        scale_to_angle(split(make_blobs(24, 2, 2, 0.5, 1).unwrap(), 16, 8, 1).unwrap()).unwrap()
    }

    fn tiny_config(epochs: usize) -> QnnConfig {
        QnnConfig {
            epochs,
            batch_size: 4,
            lr: 0.05,
            ..QnnConfig::undefended(2, 2, 2, 3)
        }
    }

    #[test]
    fn zero_epochs_is_empty() {
        let ds = tiny();
        let mut model = QnnModel::new(tiny_config(0)).unwrap();
        let mut obs = Counter(0, vec![]);
        let report = train(&mut model, &ds, Some(&mut obs)).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(obs.0, 0);
        assert!(obs.1.is_empty());
    }

    #[test]
    fn observer_sees_every_record() {
        let ds = tiny();
        let mut model = QnnModel::new(tiny_config(3)).unwrap();
        let mut obs = Counter(0, vec![]);
        let report = train(&mut model, &ds, Some(&mut obs)).unwrap();
        assert_eq!(report.epochs.len(), 3);
        assert_eq!(obs.0, 3 * 16);
        assert_eq!(report.records_emitted, 3 * 16);
        assert_eq!(obs.1, vec![1, 2, 3]);
        assert_eq!(model.optimizer.t, 3 * 4);
    }

    #[test]
    fn same_seed_same_report() {
        let ds = tiny();
        let run = || {
            let mut model = QnnModel::new(tiny_config(2)).unwrap();
            (train(&mut model, &ds, None).unwrap(), model)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn input_checks() {
        let ds = tiny();
        let mut model = QnnModel::new(QnnConfig::iris(0)).unwrap();
        assert!(matches!(train(&mut model, &ds, None), Err(QnnError::DatasetShape { .. })));
        let empty = Dataset::prescaled(vec![vec![0.1, 0.2]], vec![0], 2, vec![], vec![0]).unwrap();
        let mut model = QnnModel::new(tiny_config(1)).unwrap();
        assert!(matches!(train(&mut model, &empty, None), Err(QnnError::EmptyDataset)));
    }
}
