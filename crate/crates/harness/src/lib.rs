//! Experiment plumbing around `gpi-core`: run configuration, the training
//! loop with its CSV record, planner tables, bound verification, and plots.

pub mod config;
pub mod error;
pub mod plan;
pub mod plot;
pub mod train;
pub mod verify;

pub use config::{Algo, RunConfig};
pub use error::{HarnessError, Result};
