//! Deterministic network simulator.

pub mod engine;
pub mod mailbox;
pub mod metrics;
pub mod schedule;
pub mod trace;

pub use engine::{run, SimError, Simulation};
pub use metrics::{snapshot_metrics, RunSummary};
pub use trace::SimTrace;
