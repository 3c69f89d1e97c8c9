//! Wasserstein-split ensembles of streaming sparse Gaussian processes.
//!
//! `no_std` with `alloc`. File formats, the command line and timing live in
//! the `wgpr` crate.
#![no_std]

extern crate alloc;

mod bound;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod kernel;
pub mod linalg;
pub mod metric;
pub mod optimize;
pub mod sparse;
pub mod stream;

pub use data::Batch;
pub use ensemble::{Decision, Ensemble, EnsembleConfig, Prediction, StepReport, WeightedMode};
pub use error::{Error, Result};
pub use kernel::{Hyperparams, LogHyperparams};
pub use metric::FiniteGaussian;
pub use optimize::{OptimizeConfig, OptimizeResult};
pub use sparse::SparseGP;
pub use stream::{StreamUpdateConfig, StreamUpdateOutcome};
