//! Mixed linear regression solvers.
//!
//! The crate provides a Wasserstein minimax solver (gradient descent-ascent on a
//! parametric critic family), EM and gradient-EM baselines for the symmetric
//! two-component model, and an in-process federated simulator that runs all
//! three over agent shards.
//!
//! Per-sample reductions go through [`exec`], which evaluates fixed-size chunks
//! either sequentially or on the rayon pool (feature `parallel`, on by default)
//! and combines the chunk partials in a fixed pairwise order, so every result is
//! bit-identical whichever path runs.

pub mod critic;
pub mod em;
pub mod error;
pub mod exec;
pub mod fedsim;
pub mod io;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod trace;
pub mod wmlr;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{Dataset, FederatedDataset, GenConfig, MlrParams, XLaw};
