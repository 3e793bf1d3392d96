//! Desk-scale laboratory for topological indoor navigation: synthetic
//! building graphs, incremental multi-level scene-graph mapping, conditional
//! trajectory-graph prediction, and informed navigation agents with
//! reproducible SR/SPL evaluation.

pub mod agents;
pub mod cggn;
pub mod cli;
pub mod error;
pub mod eval;
pub mod mapping;
pub mod numerics;
pub mod perception;
pub mod rng;
pub mod worldgen;

pub use error::{Error, Result};
