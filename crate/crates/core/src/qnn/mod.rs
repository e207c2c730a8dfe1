//! Angle-encoded quantum neural network.
//!
//! A sample is encoded as H then RZ(xᵢ) on qubit i, followed by
//! strongly-entangling layers (a ROT on every qubit, then a CNOT ring whose
//! stride cycles with the layer index). Pauli-Z expectations on every qubit
//! are computed; the user's head reads the `measured_qubits` subset and
//! produces a softmax over `n_classes + n_mask_classes` outputs.

mod adam;
mod checkpoint;
mod grad;
mod loss;
mod train;

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defense::TargetScheme;
use crate::exec::Execution;
use crate::rng::stream_rng;
use crate::simulator::{self, Circuit, GateOp, NoiseSpec, SimError, StateVector, MAX_QUBITS};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use grad::{param_shift_grad, BatchItem, Gradient};
pub use loss::{cross_entropy, defended_loss, softmax, ConstantLoss, DefendedLoss, LossEval, Objective, StandardLoss, PROB_FLOOR};
pub use train::{predict, train, EpochMetrics, TrainObserver, TrainReport};

#[derive(Debug, Error)]
pub enum QnnError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("feature {index} = {value} outside [0, 2π)")]
    FeatureRange { index: usize, value: f64 },
    #[error("expected {expected} parameters, got {got}")]
    ParamShape { expected: usize, got: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("defended loss needs mask classes and a strict measured subset")]
    DefenseNotConfigured,
    #[error("dataset has no training samples")]
    EmptyDataset,
    #[error("dataset has {got} features but the model has {expected} qubits")]
    DatasetShape { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, QnnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Logits are the measured expectation values themselves.
    DirectSoftmax,
    /// Trainable affine map from measured expectation values to logits.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnnConfig {
    pub n_qubits: usize,
    pub n_layers: usize,
    /// True classes C.
    pub n_classes: usize,
    /// Extra masking classes m.
    #[serde(default)]
    pub n_mask_classes: usize,
    /// Qubits the user's head reads, in class order for a direct head.
    pub measured_qubits: Vec<usize>,
    pub head_kind: HeadKind,
    /// 0 for exact expectations.
    #[serde(default)]
    pub shots: u64,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the adversarial term in the defended loss.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub adversarial_scheme: TargetScheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl QnnConfig {
    /// 4 qubits, 6 layers, 3 classes on qubits 0..3, lr 1e-3, batch 16,
    /// 30 epochs, exact expectations.
    pub fn iris(seed: u64) -> Self {
        Self {
            n_qubits: 4,
            n_layers: 6,
            n_classes: 3,
            n_mask_classes: 0,
            measured_qubits: vec![0, 1, 2],
            head_kind: HeadKind::DirectSoftmax,
            shots: 0,
            noise: NoiseSpec::default(),
            lr: 1e-3,
            batch_size: 16,
            epochs: 30,
            alpha: 0.0,
            adversarial_scheme: TargetScheme::default(),
            seed,
            execution: Execution::default(),
        }
    }

    /// Undefended config for `n_classes` on the first qubits of an
    /// `n_qubits` register.
    pub fn undefended(n_qubits: usize, n_layers: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            n_qubits,
            n_layers,
            n_classes,
            measured_qubits: (0..n_classes).collect(),
            ..Self::iris(seed)
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.n_classes + self.n_mask_classes
    }

    pub fn n_quantum_params(&self) -> usize {
        self.n_layers * self.n_qubits * 3
    }

    pub fn is_defended(&self) -> bool {
        self.n_mask_classes > 0
    }

    /// Qubits whose expectations the cloud returns: the measured subset for
    /// an undefended model, the whole register once masking is on.
    pub fn published_qubits(&self) -> Vec<usize> {
        if self.is_defended() {
            (0..self.n_qubits).collect()
        } else {
            self.measured_qubits.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QnnError::Config(m));
        if self.n_qubits == 0 || self.n_qubits > MAX_QUBITS {
            return bad(format!("n_qubits must be in 1..={MAX_QUBITS}, got {}", self.n_qubits));
        }
        if self.n_layers == 0 {
            return bad("n_layers must be positive".into());
        }
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        let s = &self.measured_qubits;
        if s.is_empty() || s.len() > self.n_qubits {
            return bad(format!("measured_qubits must hold 1..={} qubits", self.n_qubits));
        }
        if let Some(&q) = s.iter().find(|&&q| q >= self.n_qubits) {
            return bad(format!("measured qubit {q} outside register of {}", self.n_qubits));
        }
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != s.len() {
            return bad("measured_qubits contains duplicates".into());
        }
        if self.head_kind == HeadKind::DirectSoftmax && s.len() != self.n_outputs() {
            return bad(format!(
                "direct_softmax head needs one measured qubit per output ({} outputs, {} qubits)",
                self.n_outputs(),
                s.len()
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.alpha > 0.0 && !self.is_defended() {
            return bad("alpha > 0 requires n_mask_classes > 0".into());
        }
        if self.is_defended() && s.len() >= self.n_qubits {
            return bad("defended model must measure a strict subset of the register".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        self.noise.validate()?;
        Ok(())
    }
}

/// Affine head, weights row-major (outputs × measured).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QnnModel {
    pub config: QnnConfig,
    /// Shape (n_layers, n_qubits, 3), row-major.
    pub quantum_params: Vec<f64>,
    pub head: Option<LinearHead>,
    pub optimizer: AdamState,
}

impl QnnModel {
    /// Quantum parameters uniform in [0, 2π) from the config seed. A linear
    /// head starts as the identity from measured qubit c to output c, with
    /// mask outputs and biases at zero.
    pub fn new(config: QnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, &[0x1417]);
        let quantum_params = (0..config.n_quantum_params())
            .map(|_| rng.random_range(0.0..TAU))
            .collect();
        let head = match config.head_kind {
            HeadKind::DirectSoftmax => None,
            HeadKind::Linear => {
                let (k, s) = (config.n_outputs(), config.measured_qubits.len());
                let mut weights = vec![0.0; k * s];
                for c in 0..k.min(s) {
                    weights[c * s + c] = 1.0;
                }
                Some(LinearHead {
                    weights,
                    bias: vec![0.0; k],
                })
            }
        };
        let mut model = Self {
            config,
            quantum_params,
            head,
            optimizer: AdamState::default(),
        };
        model.optimizer = AdamState::new(model.n_params());
        Ok(model)
    }

    pub fn with_quantum_params(mut self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.config.n_quantum_params() {
            return Err(QnnError::ParamShape {
                expected: self.config.n_quantum_params(),
                got: params.len(),
            });
        }
        self.quantum_params = params;
        Ok(self)
    }

    /// Quantum plus head parameter count.
    pub fn n_params(&self) -> usize {
        self.quantum_params.len() + self.head.as_ref().map_or(0, |h| h.weights.len() + h.bias.len())
    }

    /// Quantum parameters, then head weights, then head bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = self.quantum_params.clone();
        if let Some(h) = &self.head {
            out.extend_from_slice(&h.weights);
            out.extend_from_slice(&h.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(QnnError::ParamShape {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let nq = self.quantum_params.len();
        self.quantum_params.copy_from_slice(&flat[..nq]);
        if let Some(h) = &mut self.head {
            let nw = h.weights.len();
            h.weights.copy_from_slice(&flat[nq..nq + nw]);
            h.bias.copy_from_slice(&flat[nq + nw..]);
        }
        Ok(())
    }

    /// User logits from all-qubit expectations.
    pub fn logits(&self, expvals: &[f64]) -> Vec<f64> {
        let measured: Vec<f64> = self.config.measured_qubits.iter().map(|&q| expvals[q]).collect();
        match &self.head {
            None => measured,
            Some(h) => {
                let s = measured.len();
                h.bias
                    .iter()
                    .enumerate()
                    .map(|(c, b)| b + h.weights[c * s..(c + 1) * s].iter().zip(&measured).map(|(w, x)| w * x).sum::<f64>())
                    .collect()
            }
        }
    }
}

/// One forward pass as seen by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardRecord {
    pub angles: Vec<f64>,
    /// ⟨Z⟩ for every qubit of the register.
    pub expvals: Vec<f64>,
    pub user_probs: Vec<f64>,
    pub predicted_class: usize,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_features(n_qubits: usize, features: &[f64]) -> Result<()> {
    if features.len() != n_qubits {
        return Err(QnnError::FeatureCount {
            expected: n_qubits,
            got: features.len(),
        });
    }
    if let Some((index, &value)) = features.iter().enumerate().find(|(_, &x)| !(0.0..TAU).contains(&x)) {
        return Err(QnnError::FeatureRange { index, value });
    }
    Ok(())
}

/// H on every qubit, then RZ(xᵢ) on qubit i.
pub fn encode(n_qubits: usize, features: &[f64]) -> Result<Circuit> {
    check_features(n_qubits, features)?;
    let mut c = Circuit::with_capacity(n_qubits, 2 * n_qubits)?;
    for q in 0..n_qubits {
        c.push(GateOp::H(q))?;
    }
    for (q, &x) in features.iter().enumerate() {
        c.push(GateOp::Rz(q, x))?;
    }
    Ok(c)
}

/// CNOT stride for layer `layer` of an `n_qubits` ring.
pub fn ring_stride(layer: usize, n_qubits: usize) -> usize {
    layer % (n_qubits - 1) + 1
}

fn ansatz_ops(n_qubits: usize, n_layers: usize, params: &[f64]) -> impl Iterator<Item = GateOp> + '_ {
    (0..n_layers).flat_map(move |l| {
        let rots = (0..n_qubits).map(move |q| {
            let p = &params[(l * n_qubits + q) * 3..][..3];
            GateOp::Rot(q, [p[0], p[1], p[2]])
        });
        let ring = (0..if n_qubits > 1 { n_qubits } else { 0 }).map(move |q| GateOp::Cnot {
            control: q,
            target: (q + ring_stride(l, n_qubits)) % n_qubits,
        });
        rots.chain(ring)
    })
}

/// Strongly-entangling layers over a flat (layers × qubits × 3) tensor.
pub fn build_ansatz(n_qubits: usize, n_layers: usize, params: &[f64]) -> Result<Circuit> {
    let expected = n_layers * n_qubits * 3;
    if params.len() != expected {
        return Err(QnnError::ParamShape {
            expected,
            got: params.len(),
        });
    }
    let mut c = Circuit::with_capacity(n_qubits, n_layers * n_qubits * 2)?;
    for op in ansatz_ops(n_qubits, n_layers, params) {
        c.push(op)?;
    }
    Ok(c)
}

/// Evolves an encoded state through the ansatz in place. `params` is
/// assumed to have the configured shape.
pub(crate) fn evolve(state: &mut StateVector, config: &QnnConfig, params: &[f64]) -> Result<()> {
    for op in ansatz_ops(config.n_qubits, config.n_layers, params) {
        state.apply(&op)?;
    }
    Ok(())
}

pub(crate) fn encoded_state(config: &QnnConfig, features: &[f64]) -> Result<StateVector> {
    Ok(simulator::run(&encode(config.n_qubits, features)?)?)
}

/// All-qubit expectations after the ansatz, exact or shot-sampled.
pub(crate) fn measure(config: &QnnConfig, encoded: &StateVector, params: &[f64], stream: &[u64]) -> Result<Vec<f64>> {
    let mut state = encoded.clone();
    evolve(&mut state, config, params)?;
    if config.shots == 0 {
        Ok(simulator::expvals_z(&state))
    } else {
        let mut rng = stream_rng(config.seed, stream);
        Ok(simulator::sampled_expvals(&state, config.shots, &config.noise, &mut rng)?)
    }
}

pub(crate) fn record_from_expvals(model: &QnnModel, angles: &[f64], expvals: Vec<f64>) -> ForwardRecord {
    let user_probs = softmax(&model.logits(&expvals));
    ForwardRecord {
        angles: angles.to_vec(),
        predicted_class: argmax(&user_probs),
        expvals,
        user_probs,
    }
}

pub(crate) fn forward_stream(model: &QnnModel, features: &[f64], stream: &[u64]) -> Result<ForwardRecord> {
    let encoded = encoded_state(&model.config, features)?;
    let expvals = measure(&model.config, &encoded, &model.quantum_params, stream)?;
    Ok(record_from_expvals(model, features, expvals))
}

/// Runs the model on one angle-encoded sample. In shot mode the sampling
/// stream is fixed, so repeated calls agree.
pub fn forward(model: &QnnModel, features: &[f64]) -> Result<ForwardRecord> {
    forward_stream(model, features, &[0xf0])
}
