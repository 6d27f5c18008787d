//! Optimal stopping by backward induction over learned soft stopping decisions.
//!
//! The crate trains one small feedforward network per decision date, working
//! backwards from the horizon, and certifies the learned policy with a pair of
//! Monte Carlo bounds:
//!
//! * a lower bound from running the policy on fresh paths,
//! * an upper bound from a dual martingale built out of nested simulations.
//!
//! Built-in problem families: Bermudan max-call under multivariate
//! Black-Scholes, a callable barrier reverse convertible priced on a daily
//! monitoring grid, optimal stopping of fractional Brownian motion, and finite
//! scenario trees with an exact dynamic-programming solver for calibration.

// Validation deliberately writes `!(x > 0.0)` so NaN fails closed, numeric
// kernels index several arrays in lockstep, and problem constructors take
// one argument per contract term.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

pub mod bounds;
pub mod config;
pub mod experiment;
pub mod linalg;
pub mod net;
pub mod policy;
pub mod process;
pub mod rng;
pub mod stats;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(
        "matrix not positive semidefinite: pivot {pivot} fell below tolerance even after jitter"
    )]
    NotPositiveSemidefinite { pivot: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("batch of size 1 is not enough to form batch statistics; use at least 2 samples")]
    BatchTooSmall,
    #[error("non-finite feature at index {index}: {value}")]
    NonFiniteFeature { index: usize, value: f64 },
    #[error("non-finite {what} while training net {time_index} at step {step}")]
    NonFiniteTraining { what: String, time_index: usize, step: usize },
    #[error("malformed scenario tree: {0}")]
    MalformedTree(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
pub(crate) mod testkit;
