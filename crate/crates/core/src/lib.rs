//! Streaming-dataflow modeling and mapping of 3D CNNs onto FPGA devices.
//!
//! The crate models a network as a DAG of typed layers ([`model`]), binds each
//! layer to a streaming hardware building block with coarse (`s_in`/`s_out`)
//! and fine (`p_mac`) parallelism ([`hwblocks`]), assembles branch-aware
//! synchronous-dataflow topology matrices per partition ([`sdf`]), and predicts
//! latency and throughput from initiation intervals ([`perf`]). Parallelism
//! configurations are searched per partition with simulated annealing under
//! device resource constraints ([`dse`]), and the analytic predictions are
//! validated against a cycle-level token-flow simulator ([`sim`]). Fixed-point
//! word-length effects are analyzed in [`quant`].
//!
//! Data-parallel work (per-partition searches, sweep cells, validation runs)
//! runs on rayon when the default `parallel` feature is enabled and falls back
//! to plain sequential iterators otherwise; see [`par`].

pub mod dse;
pub mod error;
pub mod hwblocks;
pub mod model;
pub mod par;
pub mod partition;
pub mod perf;
pub mod quant;
pub mod sdf;
pub mod sim;
pub mod synth;
pub mod zoo;

pub use error::{Error, Result};

/// Exact rational used for rates, matrix entries and cycle accounting.
///
/// All rate arithmetic is kept rational so the analytic model and the
/// simulator agree bit-for-bit instead of drifting apart in floating point.
pub type Rat = num_rational::Ratio<i128>;

/// Convenience constructor for a [`Rat`].
pub fn rat(num: i128, den: i128) -> Rat {
    Rat::new(num, den)
}
