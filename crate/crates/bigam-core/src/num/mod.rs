//! Low-level numerical building blocks shared across the crate:
//! Gauss-Legendre rules, standard-normal utilities, the bivariate normal
//! CDF, and forward-mode second-order dual numbers.

pub mod bvn;
pub mod dual;
pub mod gauss_legendre;
pub mod normal;
pub mod sym_eigen;

pub use bvn::{bvn_bundle, bvn_cdf, bvn_pdf, BvnBundle};
pub use dual::Dual2;
pub use gauss_legendre::GaussLegendre;
pub use sym_eigen::{sym_eigen, SymEigen};
