//! Toolkit for multivariate moving-average processes driven by Lévy noise.
//!
//! The crate is organised around the pipeline used to study small-ball
//! ("tube") probabilities of processes of the form
//!
//! ```text
//! X_t = ∫_{-∞}^{t} ( Φ(t-u) - Ψ(-u) ) dL_u ,
//! ```
//!
//! where `Φ`, `Ψ` vanish on the negative half-line and `L` is a two-sided
//! Lévy process:
//!
//! * [`gridfn`] / [`powersum`] — Volterra convolution algebra on uniform
//!   grids and, exactly, on finite sums of power functions; convolution
//!   determinants, adjugates and Laplace transforms.
//! * [`kernels`] — kernel constructors (fractional, matrix-exponential,
//!   power-matrix, triangular, tabulated) and the support / integrability /
//!   regularity diagnostics for them.
//! * [`levymeasure`] — jump-measure models (atoms, independent marginals,
//!   polar, subordinated, copula-defined, linear-mixture transforms) with
//!   mass queries, restricted samplers and the origin-support check.
//! * [`copula`] — Lévy copulas, tail integrals and rectangle masses.
//! * [`simulate`] — driver and moving-average path simulation, the
//!   past/future decomposition, and exact Ornstein–Uhlenbeck recursion.
//! * [`mcverify`] — Monte Carlo tube, conditional-tube and hitting
//!   probability estimators with Wilson confidence intervals.
//!
//! Everything downstream of a seed is deterministic: random number streams
//! are counter-derived per (role, index), so results do not depend on the
//! number of worker threads.

pub mod copula;
pub mod gridfn;
pub mod kernels;
pub mod levymeasure;
pub mod mcverify;
pub mod powersum;
pub mod simulate;
pub mod streams;

pub(crate) mod linalg;
pub(crate) mod quad;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two grid functions do not share step and length.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    /// Matrix or vector dimensions are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    /// A parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    /// The requested quantity is not finite (diverging mass or integral).
    #[error("diverging quantity: {0}")]
    Divergent(String),
    /// The operation is not implemented for this model or kernel family.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A numeric routine failed to converge or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
