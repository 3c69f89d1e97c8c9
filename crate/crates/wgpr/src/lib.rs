//! Data formats, synthetic data and the experiment harness around
//! `wgpr-core`.

pub mod dataset;
pub mod error;
pub mod format;
pub mod run;
pub mod synth;

pub use error::{Error, Result};
