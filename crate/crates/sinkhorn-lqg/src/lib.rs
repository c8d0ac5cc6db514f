//! Distributionally robust linear-quadratic-Gaussian synthesis over
//! entropy-regularized Wasserstein (Sinkhorn) ambiguity sets.
//!
//! The toolkit solves the finite-horizon output-feedback control problem in
//! which the initial-state, process-noise, and measurement-noise
//! distributions are only known to lie within Sinkhorn balls around nominal
//! Gaussians. It computes the globally optimal linear policy on purified
//! outputs, the worst-case Gaussian covariances, and a Nash-gap certificate,
//! and ships a Monte Carlo engine for nominal-vs-robust comparisons.
//!
//! See the `book/` guide for worked chapters; the runnable snippets there are
//! doc-tested through [`guide`].

pub mod config;
pub mod divergences;
pub mod error;
pub mod guide;
pub mod lifted;
pub mod oracles;
pub mod rng;
pub mod simulation;
pub mod solver;
pub mod spd;

pub use error::{Error, Result};
