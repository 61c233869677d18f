//! Behavioral simulator of a train-in-memory architecture that computes
//! 8-bit floating-point scalar products in the time domain on a passive
//! memristor crossbar.
//!
//! The datapath runs in five steps: element-wise exponent addition, largest
//! summed-exponent search, mantissa shift-scaling against the maximum,
//! fixed-point product-sum in the crossbar, and digitization back to the
//! 8-bit float format. Every step has a bit-accurate ideal form plus, for the
//! analog stages, a physical mapping (code -> resistance -> RC discharge time
//! -> pulse width -> integrated charge) with a multiplicative Gaussian
//! process-variability model on top.
//!
//! Modules:
//! - [`fp8`]: the E4M4 storage format, exact encode/decode, and a wide
//!   fixed-point dot-product oracle.
//! - [`pipeline`]: the five-step datapath and its full execution trace.
//! - [`analog`]: physical code/time/resistance/charge mappings, the
//!   perturbation model, and Monte Carlo error sweeps.
//! - [`energy`]: per-step energy accounting and TOPS/W.
//! - [`training`]: a small MLP trained by backpropagation with every
//!   matrix-vector product routed through the simulated MAC.
//!
//! Monte Carlo trials are embarrassingly parallel; with the default
//! `parallel` feature they fan out over rayon, and the sequential fallback
//! produces byte-identical results (each trial owns a counter-derived RNG
//! stream).

pub mod analog;
pub mod energy;
pub mod fp8;
pub mod pipeline;
pub mod training;

pub use analog::{AnalogConfig, ErrorStats, PerturbationMode, VariabilityModel};
pub use energy::{EnergyMeter, EnergyTable, PipelineStep};
pub use fp8::{oracle_dot, Fp8, FpVector, Rounding, SignificandMode};
pub use pipeline::{DigitizeMode, ExponentSums, MacTrace, PipelineConfig, Variability};
pub use training::{Activation, Dataset, DemoConfig, Engine, MacEngine, Mlp, TrainRecord};

use serde::{Deserialize, Serialize};

/// Everything the composite entry points (`pipeline::mac`, Monte Carlo
/// sweeps, training) need to know about the simulated hardware.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub pipeline: PipelineConfig,
    pub analog: AnalogConfig,
    pub energy: EnergyTable,
}

/// Errors reported by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite operand")]
    NonFiniteOperand,
    #[error("length mismatch: x has {x_len} elements, w has {w_len}")]
    LengthMismatch { x_len: usize, w_len: usize },
    #[error("vector length {len} exceeds crossbar rows {rows}")]
    VectorTooLong { len: usize, rows: usize },
    #[error("empty operand vector")]
    EmptyVector,
    #[error("empty exponent set")]
    EmptyExponentSet,
    #[error("exponent sum {sum} exceeds e_max {e_max}")]
    SumExceedsMax { sum: u32, e_max: u32 },
    #[error("{field} code out of range")]
    CodeOutOfRange { field: &'static str },
    #[error("malformed code literal {token:?}: expected s:e:m with decimal fields")]
    MalformedCode { token: String },
    #[error("empty workload")]
    EmptyWorkload,
    #[error("sigma must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown {what} {value:?}")]
    UnknownName { what: &'static str, value: String },
}

pub type Result<T> = std::result::Result<T, Error>;
