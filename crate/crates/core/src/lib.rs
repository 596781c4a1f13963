//! Adaptive mini-batch coreset selection for stochastic gradient training.
//!
//! The training pipeline selects weighted mini-batch coresets from random
//! subsets of the data by greedy facility-location maximization over
//! last-layer gradient distances, fits a diagonal quadratic surrogate of the
//! loss around the selection point, trains on the coresets while the
//! surrogate tracks a sampled estimate of the true loss, and reselects when
//! the validity ratio drifts past a threshold. Learned examples are
//! progressively dropped from the selection ground set.
//!
//! Modules:
//! - [`numerics`]: dense vector kernels, pairwise distances, seeded RNG.
//! - [`models`]: softmax regression and a two-layer MLP with hand-derived
//!   gradients and exact Hessian-vector products; synthetic and file datasets.
//! - [`submodular`]: facility-location objective, greedy/lazy-greedy/brute
//!   maximizers, coreset weight assignment.
//! - [`quadmodel`]: EMA-smoothed gradient/curvature statistics, Hutchinson
//!   diagonal estimation, the quadratic surrogate and its validity ratio.
//! - [`trainer`]: the adaptive training loop, baselines, and gradient
//!   estimator diagnostics.

pub mod models;
pub mod numerics;
pub mod quadmodel;
pub mod submodular;
pub mod trainer;

use thiserror::Error;

/// Errors surfaced by the library's fallible operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An exact/enumeration routine was asked for an instance above its guard.
    #[error("instance too large: {0}")]
    TooLarge(String),
    /// A data file failed to parse; `line` is 1-based.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
