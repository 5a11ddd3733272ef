//! Estimation of penalized bivariate additive models for binary and
//! ordinal responses.
//!
//! The central object is a pair of latent regressions whose discrete
//! outcomes are observed jointly. Each margin carries a linear predictor
//! built from parametric terms, penalized smooths, Markov random fields
//! and random effects; the two margins are tied together by a copula (or
//! a structural coefficient in the triangular case). Fitting maximizes
//! the penalized log-likelihood by iteratively reweighted least squares,
//! with smoothing parameters chosen by an unbiased risk estimator.
//!
//! Crate layout:
//!
//! - [`num`]: low-level numerics (normal distribution, bivariate normal
//!   CDF, Gauss-Legendre rules, forward-mode second-order duals).
//! - [`basis`]: B-spline bases with curvature penalties, sum-to-zero
//!   centering, Markov random field and random effect term builders.
//! - [`penalty`]: block assembly of penalty matrices over the full
//!   coefficient vector.
//! - [`copula`]: bivariate copula families, rotations, dependence-link
//!   reparameterizations and their derivative bundles.
//! - [`model`]: model kinds, design construction, cell probabilities and
//!   per-observation likelihood contributions.
//! - [`fit`]: the penalized IRLS loop with smoothing parameter selection.
//! - [`infer`]: covariance matrices, simulation-based intervals, smooth
//!   term summaries.
//! - [`sim`]: data generating processes and Monte Carlo drivers.

pub mod basis;
pub mod copula;
pub mod data;
pub mod error;
pub mod fit;
pub mod infer;
pub mod model;
pub mod num;
pub mod penalty;
pub mod rng;
pub mod sim;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
