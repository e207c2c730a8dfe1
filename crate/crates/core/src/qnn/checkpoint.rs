//! JSON checkpoint of a model and its optimizer.
//!
//! ```text
//! {
//!   "format": "qleak-checkpoint/1",
//!   "config": { ...QnnConfig... },
//!   "quantum_params_shape": [n_layers, n_qubits, 3],
//!   "quantum_params": [...row-major...],
//!   "head": null | { "weights": [[...], ...], "bias": [...] },
//!   "optimizer": { "m": [...], "v": [...], "t": 0 }
//! }
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so a save/load
//! cycle is exact.

use serde::{Deserialize, Serialize};

use super::{AdamState, LinearHead, QnnConfig, QnnError, QnnModel, Result};

pub const CHECKPOINT_FORMAT: &str = "qleak-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHead {
    /// One row per output class.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: QnnConfig,
    pub quantum_params_shape: [usize; 3],
    pub quantum_params: Vec<f64>,
    pub head: Option<CheckpointHead>,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn from_model(model: &QnnModel) -> Self {
        let cfg = &model.config;
        let width = cfg.measured_qubits.len();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config: cfg.clone(),
            quantum_params_shape: [cfg.n_layers, cfg.n_qubits, 3],
            quantum_params: model.quantum_params.clone(),
            head: model.head.as_ref().map(|h| CheckpointHead {
                weights: h.weights.chunks(width).map(<[f64]>::to_vec).collect(),
                bias: h.bias.clone(),
            }),
            optimizer: model.optimizer.clone(),
        }
    }

    pub fn into_model(self) -> Result<QnnModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(QnnError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        let cfg = self.config;
        cfg.validate()?;
        if self.quantum_params_shape != [cfg.n_layers, cfg.n_qubits, 3] {
            return Err(QnnError::Checkpoint(format!(
                "shape {:?} disagrees with config",
                self.quantum_params_shape
            )));
        }
        let mut model = QnnModel::new(cfg)?.with_quantum_params(self.quantum_params)?;
        model.head = match (model.head.is_some(), self.head) {
            (false, None) => None,
            (true, Some(h)) => {
                let weights: Vec<f64> = h.weights.concat();
                let fresh = model.head.as_ref().expect("linear head");
                if weights.len() != fresh.weights.len() || h.bias.len() != fresh.bias.len() {
                    return Err(QnnError::Checkpoint("head dimensions disagree with config".into()));
                }
                Some(LinearHead { weights, bias: h.bias })
            }
            _ => return Err(QnnError::Checkpoint("head presence disagrees with head_kind".into())),
        };
        let n = model.n_params();
        let opt = self.optimizer;
        if opt.m.len() != n || opt.v.len() != n {
            return Err(QnnError::Checkpoint("optimizer state size disagrees with model".into()));
        }
        model.optimizer = opt;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| QnnError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnn::HeadKind;

    #[test]
    fn round_trip_is_exact() {
        for head in [HeadKind::DirectSoftmax, HeadKind::Linear] {
            let mut cfg = QnnConfig::iris(8);
            cfg.head_kind = head;
            let mut model = QnnModel::new(cfg).unwrap();
            model.optimizer.t = 7;
            model.optimizer.m[3] = 1.0 / 3.0;
            let text = Checkpoint::from_model(&model).to_json();
            let back = Checkpoint::from_json(&text).unwrap().into_model().unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn rejects_inconsistent_documents() {
        let model = QnnModel::new(QnnConfig::iris(1)).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.quantum_params.pop();
        assert!(ck.into_model().is_err());
        let mut ck = Checkpoint::from_model(&model);
        ck.format = "other".into();
        assert!(ck.into_model().is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }
}
