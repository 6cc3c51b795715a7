//! Symbolic discovery of stochastic differential equations.
//!
//! The crate is organised around the pipeline used to recover drift and
//! diffusion functions from observed time series:
//!
//! * [`expr`]: expression trees over `{+, ×, variables, constants}`;
//! * [`simulate`]: ground-truth environments, SDE/SPDE integrators and datasets;
//! * [`fitness`]: Gaussian transition likelihood and squared-error objectives;
//! * [`evolution`]: the multi-tree genetic-programming engine;
//! * [`kmsr`]: the Kramers-Moyal + sparse-regression baseline;
//! * [`eval`]: model selection, error metrics, structure checks and sampling.

pub mod error;
pub mod eval;
pub mod evolution;
pub mod expr;
pub mod fitness;
pub mod kmsr;
pub mod numeric;
pub mod simulate;

pub use error::{Error, Result};
pub use expr::{ExprTree, Node};
