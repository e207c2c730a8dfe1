use super::{forward, QnnError, QnnModel, Result};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// −ln p[label], with p floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or(QnnError::LabelOutOfRange {
        label,
        n_classes: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Per-sample loss with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// ∂L/∂⟨Zq⟩ for every qubit.
    pub d_expvals: Vec<f64>,
    /// ∂L/∂(head weights ++ head bias), when the model has a linear head.
    pub d_head: Option<Vec<f64>>,
}

/// A training objective over one sample identified by its dataset row.
pub trait Objective: Sync {
    fn eval(&self, model: &QnnModel, expvals: &[f64], row: usize) -> Result<LossEval>;
}

/// Cross-entropy of the user head against the true label.
fn user_term(model: &QnnModel, expvals: &[f64], label: usize, out: &mut LossEval) -> Result<()> {
    let probs = super::softmax(&model.logits(expvals));
    out.value += cross_entropy(&probs, label)?;
    // ∂L/∂logit = p − onehot
    let mut delta = probs;
    delta[label] -= 1.0;
    let s = &model.config.measured_qubits;
    match &model.head {
        None => {
            for (c, &q) in s.iter().enumerate() {
                out.d_expvals[q] += delta[c];
            }
        }
        Some(h) => {
            let width = s.len();
            let d_head = out.d_head.get_or_insert_with(|| vec![0.0; h.weights.len() + h.bias.len()]);
            for (c, &dc) in delta.iter().enumerate() {
                for (j, &q) in s.iter().enumerate() {
                    d_head[c * width + j] += dc * expvals[q];
                    out.d_expvals[q] += dc * h.weights[c * width + j];
                }
                d_head[h.weights.len() + c] += dc;
            }
        }
    }
    Ok(())
}

fn empty_eval(model: &QnnModel) -> LossEval {
    LossEval {
        value: 0.0,
        d_expvals: vec![0.0; model.config.n_qubits],
        d_head: model.head.as_ref().map(|h| vec![0.0; h.weights.len() + h.bias.len()]),
    }
}

/// Undefended training loss.
pub struct StandardLoss<'a> {
    pub labels: &'a [usize],
}

impl Objective for StandardLoss<'_> {
    fn eval(&self, model: &QnnModel, expvals: &[f64], row: usize) -> Result<LossEval> {
        let mut out = empty_eval(model);
        user_term(model, expvals, self.labels[row], &mut out)?;
        Ok(out)
    }
}

/// L_correct on the user head plus `alpha` times the cross-entropy of a
/// weight-free softmax over every qubit against an adversarial target.
pub struct DefendedLoss<'a> {
    pub labels: &'a [usize],
    pub targets: &'a [usize],
    pub alpha: f64,
}

impl Objective for DefendedLoss<'_> {
    fn eval(&self, model: &QnnModel, expvals: &[f64], row: usize) -> Result<LossEval> {
        let mut out = empty_eval(model);
        user_term(model, expvals, self.labels[row], &mut out)?;
        if self.alpha != 0.0 {
            let probs = softmax(expvals);
            let t = self.targets[row];
            out.value += self.alpha * cross_entropy(&probs, t)?;
            for (q, p) in probs.into_iter().enumerate() {
                let onehot = if q == t { 1.0 } else { 0.0 };
                out.d_expvals[q] += self.alpha * (p - onehot);
            }
        }
        Ok(out)
    }
}

/// Loss that ignores its input.
pub struct ConstantLoss(pub f64);

impl Objective for ConstantLoss {
    fn eval(&self, model: &QnnModel, _expvals: &[f64], _row: usize) -> Result<LossEval> {
        Ok(LossEval {
            value: self.0,
            ..empty_eval(model)
        })
    }
}

/// L_correct + α·L_adversary for a single sample.
pub fn defended_loss(model: &QnnModel, features: &[f64], true_label: usize, adv_label: usize) -> Result<f64> {
    let cfg = &model.config;
    if !cfg.is_defended() || cfg.measured_qubits.len() >= cfg.n_qubits {
        return Err(QnnError::DefenseNotConfigured);
    }
    let rec = forward(model, features)?;
    let correct = cross_entropy(&rec.user_probs, true_label)?;
    let adversary = cross_entropy(&softmax(&rec.expvals), adv_label)?;
    Ok(correct + cfg.alpha * adversary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnn::{HeadKind, QnnConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], 0).unwrap(), 0.0);
        assert_abs_diff_eq!(cross_entropy(&[1.0 / 3.0; 3], 2).unwrap(), 3f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], 1).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(cross_entropy(&[1.0, 0.0], 1).unwrap(), -PROB_FLOOR.ln(), epsilon = 1e-12);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(QnnError::LabelOutOfRange { .. })));
    }

    #[test]
    fn softmax_is_normalized_and_shift_invariant() {
        let p = softmax(&[1000.0, 1001.0, 999.0]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let q = softmax(&[0.0, 1.0, -1.0]);
        for (a, b) in p.iter().zip(&q) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    fn defended_model(alpha: f64) -> QnnModel {
        let mut cfg = QnnConfig::iris(5);
        cfg.n_mask_classes = 1;
        cfg.head_kind = HeadKind::Linear;
        cfg.alpha = alpha;
        QnnModel::new(cfg).unwrap()
    }

    #[test]
    fn defended_loss_components() {
        let x = [0.4, 2.2, 4.1, 1.0];
        let m0 = defended_model(0.0);
        let rec = forward(&m0, &x).unwrap();
        let correct = cross_entropy(&rec.user_probs, 2).unwrap();
        assert_eq!(defended_loss(&m0, &x, 2, 3).unwrap(), correct);

        let m1 = defended_model(1.0);
        let adv = cross_entropy(&softmax(&rec.expvals), 3).unwrap();
        assert_abs_diff_eq!(defended_loss(&m1, &x, 2, 3).unwrap(), correct + adv, epsilon = 1e-15);

        let undefended = QnnModel::new(QnnConfig::iris(5)).unwrap();
        assert!(matches!(defended_loss(&undefended, &x, 0, 1), Err(QnnError::DefenseNotConfigured)));
    }

    #[test]
    fn linearity_in_alpha() {
        // α = 1 with equal component values v gives 2v
        let model = defended_model(1.0);
        let labels = [1usize];
        let targets = [1usize];
        let loss = DefendedLoss { labels: &labels, targets: &targets, alpha: 1.0 };
        // expvals chosen so the identity head and the all-qubit softmax agree:
        // the unmeasured qubit equals the mask logit's zero bias.
        let e = [0.2, 0.7, -0.3, 0.0];
        let got = loss.eval(&model, &e, 0).unwrap().value;
        let v = cross_entropy(&softmax(&e), 1).unwrap();
        assert_abs_diff_eq!(got, 2.0 * v, epsilon = 1e-15);
    }

    #[test]
    fn alpha_zero_matches_standard_loss() {
        let model = defended_model(0.0);
        let labels = [0usize, 2];
        let targets = [3usize, 3];
        let e = [0.1, -0.4, 0.9, 0.3];
        let a = DefendedLoss { labels: &labels, targets: &targets, alpha: 0.0 }.eval(&model, &e, 1).unwrap();
        let b = StandardLoss { labels: &labels }.eval(&model, &e, 1).unwrap();
        assert_eq!(a, b);
    }
}
