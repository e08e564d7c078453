//! Experiment harness for the `wmlr` solvers: configuration, presets, sweeps,
//! table reproduction and the invariant checks behind the `wmlr` binary.

pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod presets;
pub mod reproduce;
pub mod sweep;

pub use config::{Algorithm, ExperimentConfig, Overrides, Scenario};
pub use error::{HarnessError, Result};
