//! Sparse covariate selection for multivariate Poisson log-normal models.
//!
//! The regression matrix is penalized by the smooth L0 surrogate
//! `phi_eps(x) = x²/(x²+eps²)`, fitted by variational EM with penalized Fisher
//! scoring, while `eps` is shrunk geometrically towards zero.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fit;
pub mod io;
pub mod metrics;
pub mod model;
pub mod penalty;
pub mod quadrature;
pub mod simulate;

pub use error::{Result, SicError};
