//! Discrete-event simulator and experiment toolkit for latency-critical
//! cloud workloads: open-loop load generation with timeliness accounting,
//! tail-latency analysis across SMT thread placements, LLC-way and
//! memory-bandwidth constraints, and a four-way workload taxonomy.

pub mod engine;
pub mod error;
pub mod experiments;
pub mod format;
pub mod loadgen;
pub mod metrics;
pub mod model;
pub mod taxonomy;

pub use error::{Error, Result};
