//! Inverse optimal transport with bilinear costs `c_A(x, y) = -x^T A y`.
//!
//! Exact and entropic discrete solvers, the gap and entropic losses with
//! their gradients, a proximal-gradient estimator, Gaussian closed forms,
//! identifiability certificates, a grid curvature estimator and the
//! experiment drivers behind the `iot` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod curvature;
pub mod entropic_ot;
pub mod error;
pub mod estimator;
pub mod exact_ot;
pub mod experiments;
pub mod gaussian;
pub mod identifiability;
pub mod linalg;
pub mod losses;
pub mod measures;

pub use error::{Error, Result};

/// Library version embedded in experiment artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
