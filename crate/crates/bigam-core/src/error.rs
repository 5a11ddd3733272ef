//! Crate error type.
//!
//! Errors fall into three broad groups that callers (notably the CLI)
//! treat differently: specification problems the user can fix in the
//! config, data problems in the supplied observations, and numerical
//! failures during fitting.

use thiserror::Error;

/// Everything that can go wrong while building or fitting a model.
#[derive(Debug, Error)]
pub enum Error {
    /// The model specification itself is invalid (bad dimensions,
    /// unknown column names, inconsistent options).
    #[error("invalid specification: {0}")]
    Spec(String),

    /// The observed data violates the requirements of the model
    /// (out-of-range levels, missing values where none are allowed,
    /// non-finite covariates).
    #[error("invalid data: {0}")]
    Data(String),

    /// A linear system became singular beyond what ridge stabilization
    /// can absorb.
    #[error("singular system: {0}")]
    Singular(String),

    /// The optimizer exhausted its iteration budget. The partial state
    /// is still reported by the fitting routines where possible.
    #[error("did not converge: {0}")]
    NoConvergence(String),
}

impl Error {
    /// Build a specification error from anything displayable.
    pub fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    /// Build a data error from anything displayable.
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
