use std::f64::consts::FRAC_PI_2;

use super::{encoded_state, measure, Objective, QnnModel, Result};
use crate::exec::{map_indexed, try_map_indexed};

/// A training sample: angle-encoded features and the dataset row that
/// objectives use to look up labels.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub features: &'a [f64],
    pub row: usize,
}

/// Batch-mean loss and gradient, laid out like [`QnnModel::params_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub grads: Vec<f64>,
}

fn with_suffix(stream: &[u64], suffix: [u64; 3]) -> Vec<u64> {
    let mut s = stream.to_vec();
    s.extend_from_slice(&suffix);
    s
}

fn sample_gradient(
    model: &QnnModel,
    item: &BatchItem<'_>,
    objective: &dyn Objective,
    stream: &[u64],
) -> Result<(f64, Vec<f64>)> {
    let cfg = &model.config;
    let row = item.row as u64;
    let encoded = encoded_state(cfg, item.features)?;
    let expvals = measure(cfg, &encoded, &model.quantum_params, &with_suffix(stream, [row, 0, 0]))?;
    let eval = objective.eval(model, &expvals, item.row)?;

    let nq = model.quantum_params.len();
    let mut grads = vec![0.0; model.n_params()];
    if eval.d_expvals.iter().any(|&d| d != 0.0) {
        let shifted = map_indexed(cfg.execution, nq, |p| -> Result<f64> {
            let mut params = model.quantum_params.clone();
            params[p] = model.quantum_params[p] + FRAC_PI_2;
            let plus = measure(cfg, &encoded, &params, &with_suffix(stream, [row, p as u64 + 1, 1]))?;
            params[p] = model.quantum_params[p] - FRAC_PI_2;
            let minus = measure(cfg, &encoded, &params, &with_suffix(stream, [row, p as u64 + 1, 2]))?;
            Ok(eval
                .d_expvals
                .iter()
                .zip(plus.iter().zip(&minus))
                .map(|(d, (a, b))| d * (a - b) / 2.0)
                .sum())
        });
        for (g, s) in grads.iter_mut().zip(shifted) {
            *g = s?;
        }
    }
    if let Some(d_head) = &eval.d_head {
        grads[nq..].copy_from_slice(d_head);
    }
    Ok((eval.value, grads))
}

/// Parameter-shift gradient of the batch-mean `objective`.
///
/// Each expectation's derivative in a rotation angle is
/// (E(θ + π/2) − E(θ − π/2)) / 2; the chain rule through the head and loss
/// is analytic. `stream` keys the shot sampler so that shot-mode gradients
/// are reproducible. Per-sample contributions are summed in batch order.
pub fn param_shift_grad(
    model: &QnnModel,
    batch: &[BatchItem<'_>],
    objective: &dyn Objective,
    stream: &[u64],
) -> Result<Gradient> {
    let per_sample = try_map_indexed(model.config.execution, batch.len(), |i| {
        sample_gradient(model, &batch[i], objective, stream)
    })?;
    let n = batch.len().max(1) as f64;
    let mut grads = vec![0.0; model.n_params()];
    let mut loss = 0.0;
    for (value, g) in per_sample {
        loss += value;
        for (acc, x) in grads.iter_mut().zip(g) {
            *acc += x;
        }
    }
    grads.iter_mut().for_each(|g| *g /= n);
    Ok(Gradient { loss: loss / n, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnn::{forward, ConstantLoss, HeadKind, QnnConfig, StandardLoss};
    use crate::simulator::{self, GateOp, StateVector};
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_extremum_has_zero_slope() {
        // E(θ) = ⟨Z⟩ after RY(θ)|0⟩ = cos θ
        let e = |t: f64| {
            let s = simulator::apply_gate(&StateVector::zero(1).unwrap(), &GateOp::Ry(0, t)).unwrap();
            simulator::expval_z(&s, 0).unwrap()
        };
        let slope = (e(FRAC_PI_2) - e(-FRAC_PI_2)) / 2.0;
        assert_abs_diff_eq!(slope, 0.0, epsilon = 1e-15);
        let t = 0.8;
        assert_abs_diff_eq!((e(t + FRAC_PI_2) - e(t - FRAC_PI_2)) / 2.0, -t.sin(), epsilon = 1e-14);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut cfg = QnnConfig::iris(1);
        cfg.head_kind = HeadKind::Linear;
        let model = QnnModel::new(cfg).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let batch = [BatchItem { features: &x, row: 0 }];
        let g = param_shift_grad(&model, &batch, &ConstantLoss(2.5), &[]).unwrap();
        assert_eq!(g.loss, 2.5);
        assert!(g.grads.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_gradient_matches_finite_difference() {
        let mut cfg = QnnConfig::iris(4);
        cfg.head_kind = HeadKind::Linear;
        let model = QnnModel::new(cfg).unwrap();
        let x = [1.1, 0.2, 5.3, 2.4];
        let labels = [2usize];
        let loss = StandardLoss { labels: &labels };
        let batch = [BatchItem { features: &x, row: 0 }];
        let g = param_shift_grad(&model, &batch, &loss, &[]).unwrap();
        let base = model.params_flat();
        let eps = 1e-6;
        let value = |flat: &[f64]| {
            let mut m = model.clone();
            m.set_params_flat(flat).unwrap();
            crate::qnn::cross_entropy(&forward(&m, &x).unwrap().user_probs, 2).unwrap()
        };
        for i in model.quantum_params.len()..base.len() {
            let mut up = base.clone();
            up[i] += eps;
            let mut dn = base.clone();
            dn[i] -= eps;
            assert_abs_diff_eq!(g.grads[i], (value(&up) - value(&dn)) / (2.0 * eps), epsilon = 1e-8);
        }
    }
}
