//! pilotrt: a desk-scale pilot runtime. A pilot holds a node allocation,
//! splits it into partitions, and executes heterogeneous workloads (process
//! tasks and function tasks) through pluggable executor backends, either in a
//! deterministic discrete-event simulation or with real local processes.
//!
//! The append-only event log produced by a run is the ground truth for all
//! analytics; the same validators and metric functions serve both modes.

pub mod agent;
pub mod analytics;
pub mod backend;
pub mod backends;
pub mod config;
pub mod harness;
pub mod presets;
pub mod real;
pub mod resources;
pub mod sim;
pub mod task;
pub mod workloads;
