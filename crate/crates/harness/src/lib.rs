//! Synthetic data, two-stage training, evaluation, ablations and the
//! complexity benchmark behind the `mambatron` command line tool.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod order;
pub mod train;
pub mod vipc;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
