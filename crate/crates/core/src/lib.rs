//! Drift-robust malicious flow detection with a mixture of graph experts.
//!
//! Flows in a time window become a multigraph over IP addresses. Two experts
//! classify each flow from different node features (averaged neighbor
//! statistics and node degree) and a gate picks one expert per flow.

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod experts;
pub mod gate;
pub mod graph;
pub mod history;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
