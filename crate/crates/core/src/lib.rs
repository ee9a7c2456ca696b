//! Policy improvement with sample reuse.
//!
//! The crate provides Gaussian policies on small tanh networks, advantage
//! estimators, a planner that chooses how to weight reused batches, the six
//! policy updaters (PPO, TRPO, VMPO and their reuse-aware variants), and an
//! exact tabular oracle for checking the improvement bounds.

pub mod autograd;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod estimation;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod planner;
pub mod policy;
pub mod replay;
pub mod updaters;

pub use error::{Error, Result};
