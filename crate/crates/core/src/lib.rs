//! Estimation of constrained rate-distortion quantities for continuous
//! multivariate sources.
//!
//! The library computes the output-constrained rate-distortion function, the
//! perfect-realism rate-distortion-perception function (its special case with
//! the reconstruction pinned to the source law), and the entropic optimal
//! transport value. All three reduce to one convex program: an I-projection
//! of the product copula of source and target onto a moment-relaxed
//! constraint set, solved through its exponential-family dual with mini-batch
//! stochastic gradient descent.
//!
//! Supporting pieces: closed-form Shannon lower bounds with reverse
//! water-filling for the vector Gaussian case (`bounds`), and an exact
//! brute-force oracle on discretized scalar instances (`oracle`) used to
//! certify the Monte-Carlo pipeline.

pub mod bounds;
pub mod copulas;
pub mod error;
pub mod marginals;
pub mod optimizer;
pub mod oracle;
pub mod problems;
pub mod projection;

pub use error::{RdpfError, Result};
