//! Prediction with expert advice under general entropies.
//!
//! * [`simplex`]: distributions, tilde coordinates and interior grids.
//! * [`losses`]: proper losses, Bayes risks and substitution functions.
//! * [`entropies`]: entropies, divergences and entropic duals.
//! * [`mixability`]: Mix operators, mixability constants and certificates.
//! * [`aggregation`]: AA, GAA, adaptive GAA and the meta-learner.
//! * [`experiments`] and [`odds`]: scenario harness and data ingestion.

pub mod aggregation;
pub mod entropies;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod losses;
pub mod mixability;
pub mod odds;
pub mod simplex;

pub use error::{Error, Result};
pub use exec::Execution;
