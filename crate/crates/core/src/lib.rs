//! Dual-level video transformer: local window attention stratified with
//! global pyramid attention, an analytic cost model, and slow reference
//! oracles that pin down every mechanism.
//!
//! Module map:
//! - [`numerics`]: dense tensor, kernels, finite differences, binary container
//! - [`attention`]: window partitioning, multi-head attention, LW/GP sub-layers, PEG
//! - [`model`]: presets, parameter state, forward pass, kernel inflation, weight manifests
//! - [`analysis`]: cost formulas, parameter/MAC counting, reports
//! - [`oracle`]: brute-force references used as ground truth
//! - [`checks`]: the oracle and gradient suites shared by tests and the CLI

pub mod analysis;
pub mod attention;
pub mod checks;
pub mod error;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod trace;

pub use error::{Error, Result};
pub use numerics::{Dual, Scalar, Tensor};
