//! Stability-checked transaction scheduling for sharded ledgers.
//!
//! A shard graph is decomposed into a layered cover, an adversary injects
//! transactions under a leaky-bucket constraint, and a single-leader or
//! hierarchical multi-leader scheduler commits them inside a deterministic
//! partially synchronous simulator. Runs are checked against closed-form
//! queue and latency bounds.

pub mod conflict;
pub mod cover;
pub mod error;
pub mod simkernel;
pub mod topology;
pub mod types;
pub mod workload;
pub mod sched_single;
pub mod sched_multi;
pub mod metrics;
pub mod audit;
pub mod scenario;
pub mod sweep;
