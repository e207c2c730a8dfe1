//! Testbed for training-data extraction from quantum neural networks hosted
//! on an untrusted cloud, and for the masking-label defense against it.
//!
//! The crate is organised bottom-up:
//!
//! - [`simulator`]: dense statevector simulator (n ≤ 12) with shot sampling
//!   and a readout bit-flip channel.
//! - [`qnn`]: angle-encoded, strongly-entangling QNN classifier trained with
//!   parameter-shift gradients and Adam. Emits per-epoch forward records.
//! - [`data`]: CSV ingestion, angle scaling, stratified splits, blobs.
//! - [`adversary`]: the cloud's log of every forward pass and the three
//!   label-voting heuristics.
//! - [`refinery`]: k-fold ensemble relabel/prune of an extracted dataset.
//! - [`defense`]: masking-class configuration and attack-degradation report.
//! - [`truth`]: harness-side label scoring, kept apart from the attack.
//! - [`pipeline`]: run-directory orchestration used by the `qleak` binary.
//!
//! Batch work (per-sample gradients, per-fold classifier fits) goes through
//! [`exec`], which uses rayon when the `parallel` feature is on and reduces
//! in index order either way, so results do not depend on the thread count.

pub mod adversary;
pub mod data;
pub mod defense;
pub mod exec;
pub mod pipeline;
pub mod qnn;
pub mod refinery;
pub mod rng;
pub mod simulator;
pub mod truth;

pub use exec::Execution;
