//! Decentralized projected primal-dual optimization for problems whose
//! objective and constraints couple neighboring nodes of a graph and whose
//! inequality and equality constraints are global sums.

pub mod algorithm;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod network;
pub mod problem;
pub mod reference;
pub mod weights;

pub use error::{Error, Result};
