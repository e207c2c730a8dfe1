//! Dense pure-state simulator.
//!
//! Qubit 0 is the least-significant bit of the basis-state index, and
//! bitstrings in count maps are written most-significant qubit first, so
//! qubit 0 is the rightmost character.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

/// Largest register the dense representation accepts.
pub const MAX_QUBITS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("register size {0} unsupported (expected 1..={MAX_QUBITS})")]
    RegisterSize(usize),
    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },
    #[error("two-qubit gate needs distinct qubits, got {0} twice")]
    RepeatedQubit(usize),
    #[error("{kind:?} takes {expected} parameter(s), got {got}")]
    ParamCount { kind: GateKind, expected: usize, got: usize },
    #[error("{kind:?} acts on {expected} qubit(s), got {got}")]
    TargetCount { kind: GateKind, expected: usize, got: usize },
    #[error("amplitude vector of length {got} does not match {n_qubits} qubits")]
    AmplitudeCount { n_qubits: usize, got: usize },
    #[error("state norm {0} is not 1")]
    NotNormalized(f64),
    #[error("shot count must be positive")]
    ZeroShots,
    #[error("counts are empty")]
    EmptyCounts,
    #[error("malformed bitstring {0:?}")]
    Bitstring(String),
    #[error("readout flip probability {0} outside [0, 1]")]
    InvalidNoise(f64),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    H,
    Rx,
    Ry,
    Rz,
    Rot,
    Cnot,
}

impl GateKind {
    pub fn n_params(self) -> usize {
        match self {
            GateKind::H | GateKind::Cnot => 0,
            GateKind::Rx | GateKind::Ry | GateKind::Rz => 1,
            GateKind::Rot => 3,
        }
    }

    pub fn n_targets(self) -> usize {
        match self {
            GateKind::Cnot => 2,
            _ => 1,
        }
    }
}

/// A gate applied to specific qubits.
///
/// `Rot([phi, theta, omega])` applies RZ(phi), then RY(theta), then RZ(omega);
/// as a matrix that is RZ(omega)·RY(theta)·RZ(phi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GateOp {
    H(usize),
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    Rot(usize, [f64; 3]),
    Cnot { control: usize, target: usize },
}

impl GateOp {
    /// Builds a gate from loosely typed parts, checking arities.
    pub fn new(kind: GateKind, targets: &[usize], params: &[f64]) -> Result<Self> {
        if targets.len() != kind.n_targets() {
            return Err(SimError::TargetCount {
                kind,
                expected: kind.n_targets(),
                got: targets.len(),
            });
        }
        if params.len() != kind.n_params() {
            return Err(SimError::ParamCount {
                kind,
                expected: kind.n_params(),
                got: params.len(),
            });
        }
        let q = targets[0];
        Ok(match kind {
            GateKind::H => GateOp::H(q),
            GateKind::Rx => GateOp::Rx(q, params[0]),
            GateKind::Ry => GateOp::Ry(q, params[0]),
            GateKind::Rz => GateOp::Rz(q, params[0]),
            GateKind::Rot => GateOp::Rot(q, [params[0], params[1], params[2]]),
            GateKind::Cnot => {
                if targets[0] == targets[1] {
                    return Err(SimError::RepeatedQubit(q));
                }
                GateOp::Cnot {
                    control: targets[0],
                    target: targets[1],
                }
            }
        })
    }

    pub fn kind(&self) -> GateKind {
        match self {
            GateOp::H(_) => GateKind::H,
            GateOp::Rx(..) => GateKind::Rx,
            GateOp::Ry(..) => GateKind::Ry,
            GateOp::Rz(..) => GateKind::Rz,
            GateOp::Rot(..) => GateKind::Rot,
            GateOp::Cnot { .. } => GateKind::Cnot,
        }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            GateOp::H(q) | GateOp::Rx(q, _) | GateOp::Ry(q, _) | GateOp::Rz(q, _) | GateOp::Rot(q, _) => {
                vec![q]
            }
            GateOp::Cnot { control, target } => vec![control, target],
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            GateOp::H(_) | GateOp::Cnot { .. } => vec![],
            GateOp::Rx(_, a) | GateOp::Ry(_, a) | GateOp::Rz(_, a) => vec![a],
            GateOp::Rot(_, p) => p.to_vec(),
        }
    }

    /// Checks the gate against a register of `n_qubits`.
    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let qs = self.qubits();
        for &q in &qs {
            if q >= n_qubits {
                return Err(SimError::QubitOutOfRange {
                    index: q,
                    n_qubits,
                });
            }
        }
        if qs.len() == 2 && qs[0] == qs[1] {
            return Err(SimError::RepeatedQubit(qs[0]));
        }
        Ok(())
    }
}

fn check_register(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(SimError::RegisterSize(n_qubits));
    }
    Ok(())
}

/// Ordered gate list over a fixed register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    n_qubits: usize,
    ops: Vec<GateOp>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Result<Self> {
        check_register(n_qubits)?;
        Ok(Self {
            n_qubits,
            ops: Vec::new(),
        })
    }

    pub fn with_capacity(n_qubits: usize, capacity: usize) -> Result<Self> {
        check_register(n_qubits)?;
        Ok(Self {
            n_qubits,
            ops: Vec::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, op: GateOp) -> Result<&mut Self> {
        op.validate(self.n_qubits)?;
        self.ops.push(op);
        Ok(self)
    }

    /// Appends every op of `other`; registers must match.
    pub fn append(&mut self, other: &Circuit) -> Result<&mut Self> {
        if other.n_qubits != self.n_qubits {
            return Err(SimError::RegisterSize(other.n_qubits));
        }
        self.ops.extend_from_slice(&other.ops);
        Ok(self)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn ops(&self) -> &[GateOp] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0…0⟩ on `n_qubits`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_register(n_qubits)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex64>) -> Result<Self> {
        check_register(n_qubits)?;
        if amps.len() != 1 << n_qubits {
            return Err(SimError::AmplitudeCount {
                n_qubits,
                got: amps.len(),
            });
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(SimError::NotNormalized(norm));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `op` in place.
    pub fn apply(&mut self, op: &GateOp) -> Result<()> {
        op.validate(self.n_qubits)?;
        self.apply_unchecked(op);
        Ok(())
    }

    /// Applies every op of `circuit` in place.
    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<()> {
        if circuit.n_qubits != self.n_qubits {
            return Err(SimError::RegisterSize(circuit.n_qubits));
        }
        // ops were validated on push
        for op in &circuit.ops {
            self.apply_unchecked(op);
        }
        Ok(())
    }

    fn apply_unchecked(&mut self, op: &GateOp) {
        match *op {
            GateOp::H(q) => {
                let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
                self.apply_1q(q, [[h, h], [h, -h]]);
            }
            GateOp::Rx(q, a) => self.apply_1q(q, rx(a)),
            GateOp::Ry(q, a) => self.apply_1q(q, ry(a)),
            GateOp::Rz(q, a) => self.apply_rz(q, a),
            GateOp::Rot(q, [phi, theta, omega]) => {
                self.apply_rz(q, phi);
                self.apply_1q(q, ry(theta));
                self.apply_rz(q, omega);
            }
            GateOp::Cnot { control, target } => {
                let c = 1usize << control;
                let t = 1usize << target;
                for i in 0..self.amps.len() {
                    if i & c != 0 && i & t == 0 {
                        self.amps.swap(i, i | t);
                    }
                }
            }
        }
    }

    fn apply_1q(&mut self, q: usize, m: [[Complex64; 2]; 2]) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let j = i | bit;
                let (x, y) = (self.amps[i], self.amps[j]);
                self.amps[i] = m[0][0] * x + m[0][1] * y;
                self.amps[j] = m[1][0] * x + m[1][1] * y;
            }
        }
    }

    fn apply_rz(&mut self, q: usize, a: f64) {
        let bit = 1usize << q;
        let lo = Complex64::from_polar(1.0, -a / 2.0);
        let hi = Complex64::from_polar(1.0, a / 2.0);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            *amp *= if i & bit == 0 { lo } else { hi };
        }
    }
}

fn rx(a: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (a / 2.0).sin_cos();
    let c = Complex64::new(c, 0.0);
    let mis = Complex64::new(0.0, -s);
    [[c, mis], [mis, c]]
}

fn ry(a: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (a / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

/// Returns the state after applying `op`.
pub fn apply_gate(state: &StateVector, op: &GateOp) -> Result<StateVector> {
    let mut next = state.clone();
    next.apply(op)?;
    Ok(next)
}

/// Runs `circuit` from |0…0⟩.
pub fn run(circuit: &Circuit) -> Result<StateVector> {
    let mut state = StateVector::zero(circuit.n_qubits)?;
    state.apply_circuit(circuit)?;
    Ok(state)
}

/// Exact ⟨Z⟩ on one qubit.
pub fn expval_z(state: &StateVector, qubit: usize) -> Result<f64> {
    if qubit >= state.n_qubits {
        return Err(SimError::QubitOutOfRange {
            index: qubit,
            n_qubits: state.n_qubits,
        });
    }
    let bit = 1usize << qubit;
    Ok(state
        .amps
        .iter()
        .enumerate()
        .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
        .sum())
}

/// Exact ⟨Z⟩ on every qubit, in qubit order, from one pass over the amplitudes.
pub fn expvals_z(state: &StateVector) -> Vec<f64> {
    let mut out = vec![0.0; state.n_qubits];
    for (i, a) in state.amps.iter().enumerate() {
        let p = a.norm_sqr();
        for (q, e) in out.iter_mut().enumerate() {
            if i >> q & 1 == 0 {
                *e += p;
            } else {
                *e -= p;
            }
        }
    }
    out
}

/// Independent per-qubit readout bit-flip channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub readout_flip_prob: f64,
}

impl NoiseSpec {
    pub fn new(readout_flip_prob: f64) -> Result<Self> {
        let spec = Self { readout_flip_prob };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.readout_flip_prob) {
            return Err(SimError::InvalidNoise(self.readout_flip_prob));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.readout_flip_prob == 0.0
    }
}

/// Draws `shots` measured basis indices, readout noise included.
fn draw_outcomes<R: Rng>(
    state: &StateVector,
    shots: u64,
    noise: &NoiseSpec,
    rng: &mut R,
    mut sink: impl FnMut(usize),
) {
    let mut cdf = Vec::with_capacity(state.amps.len());
    let mut acc = 0.0;
    for a in &state.amps {
        acc += a.norm_sqr();
        cdf.push(acc);
    }
    let total = acc;
    let last = cdf.len() - 1;
    for _ in 0..shots {
        let u = rng.random::<f64>() * total;
        let mut idx = cdf.partition_point(|&c| c <= u).min(last);
        if !noise.is_noiseless() {
            for q in 0..state.n_qubits {
                if rng.random::<f64>() < noise.readout_flip_prob {
                    idx ^= 1 << q;
                }
            }
        }
        sink(idx);
    }
}

fn bitstring(index: usize, n_qubits: usize) -> String {
    format!("{index:0n_qubits$b}")
}

/// Samples measurement outcomes in the computational basis.
pub fn sample_counts(
    state: &StateVector,
    shots: u64,
    seed: u64,
    noise: &NoiseSpec,
) -> Result<BTreeMap<String, u64>> {
    if shots == 0 {
        return Err(SimError::ZeroShots);
    }
    noise.validate()?;
    let mut rng = stream_rng(seed, &[]);
    let mut hist = vec![0u64; state.amps.len()];
    draw_outcomes(state, shots, noise, &mut rng, |i| hist[i] += 1);
    Ok(hist
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .map(|(i, c)| (bitstring(i, state.n_qubits), c))
        .collect())
}

/// Shot-estimated ⟨Z⟩ on every qubit, drawing from `rng`.
pub fn sampled_expvals<R: Rng>(
    state: &StateVector,
    shots: u64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if shots == 0 {
        return Err(SimError::ZeroShots);
    }
    noise.validate()?;
    let mut ones = vec![0u64; state.n_qubits];
    draw_outcomes(state, shots, noise, rng, |idx| {
        for (q, o) in ones.iter_mut().enumerate() {
            *o += (idx >> q & 1) as u64;
        }
    });
    Ok(ones
        .into_iter()
        .map(|o| (shots as f64 - 2.0 * o as f64) / shots as f64)
        .collect())
}

/// (N₀ − N₁) / shots for `qubit`, from a count map.
pub fn estimate_expval_z(counts: &BTreeMap<String, u64>, qubit: usize) -> Result<f64> {
    let mut shots = 0u64;
    let mut plus = 0i128;
    for (bits, &c) in counts {
        let bytes = bits.as_bytes();
        if qubit >= bytes.len() {
            return Err(SimError::QubitOutOfRange {
                index: qubit,
                n_qubits: bytes.len(),
            });
        }
        let sign = match bytes[bytes.len() - 1 - qubit] {
            b'0' => 1,
            b'1' => -1,
            _ => return Err(SimError::Bitstring(bits.clone())),
        };
        plus += sign * c as i128;
        shots += c;
    }
    if shots == 0 {
        return Err(SimError::EmptyCounts);
    }
    Ok(plus as f64 / shots as f64)
}
