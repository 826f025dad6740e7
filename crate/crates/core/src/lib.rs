//! MambaTron: a bidirectional selective state space layer followed by
//! block-windowed attention, plus the cross-modal point cloud completion
//! network built from it.
//!
//! Everything runs on a small dense `f64` tensor type with a reverse-mode
//! tape ([`numerics::Graph`]).

pub mod blockattn;
pub mod cell;
pub mod error;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod ssm;

pub use error::{Error, Result};
