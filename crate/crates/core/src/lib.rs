//! Subordinated Brownian motion toolkit: Lévy measures, jump kernels, the
//! construction recipe for elliptic-Harnack counterexamples, Monte Carlo
//! estimators and the verification experiments built on them.

pub mod error;
pub mod experiments;
pub mod kernel;
pub mod measure;
pub mod numeric;
pub mod quad;
pub mod recipe;
pub mod sim;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
