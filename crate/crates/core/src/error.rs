use thiserror::Error;

use crate::types::{AccountId, ClusterId, ShardId, Time, TxnId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("shard count must be at least 1")]
    EmptyGraph,
    #[error("grid {rows}x{cols} does not have {shards} shards")]
    GridShape { rows: u32, cols: u32, shards: u32 },
    #[error("random graph with {shards} shards stayed disconnected after {attempts} draws")]
    Disconnected { shards: u32, attempts: u32 },
    #[error("edge probability {0} outside (0, 1]")]
    EdgeProbability(f64),
    #[error("unknown shard {0}")]
    UnknownShard(ShardId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverError {
    #[error("layer {layer}: no cluster contains the {radius}-neighborhood of {shard}")]
    Uncovered { layer: u32, radius: u64, shard: ShardId },
    #[error("layer {layer} sublayer {sublayer}: {shard} appears in two clusters")]
    SublayerOverlap { layer: u32, sublayer: u32, shard: ShardId },
    #[error("cluster {0}: leader neighborhood escapes the cluster")]
    LeaderNeighborhood(ClusterId),
    #[error("cluster {0}: induced subgraph is disconnected")]
    Disconnected(ClusterId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("injection rate must satisfy 0 <= rho <= 1, got {0}")]
    Rate(String),
    #[error("burstiness must be at least 1")]
    Burstiness,
    #[error("k must satisfy 1 <= k <= s (k = {k}, s = {s})")]
    ShardsPerTxn { k: u32, s: u32 },
    #[error("account space must be at least 1")]
    AccountSpace,
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A handler observed a state the protocol forbids. Aborts the run.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolViolation {
    #[error("t={time}: {shard} received a request for foreign account {account}")]
    ForeignAccount { time: Time, shard: ShardId, account: AccountId },
    #[error("t={time}: response for unknown version {version} at cluster {cluster}")]
    UnknownVersion { time: Time, cluster: ClusterId, version: u64 },
    #[error("t={time}: {shard} got a batch for version {version} of {cluster} it never occupied")]
    VersionMismatch { time: Time, shard: ShardId, cluster: ClusterId, version: u64 },
    #[error("t={time}: duplicate final commit for {txn} from {shard}")]
    DuplicateConfirmation { time: Time, txn: TxnId, shard: ShardId },
    #[error("t={time}: account {account} would go negative ({value})")]
    NegativeBalance { time: Time, account: AccountId, value: i64 },
    #[error("t={time}: {cluster} got control for {shard} it never requested")]
    UnrequestedControl { time: Time, cluster: ClusterId, shard: ShardId },
    #[error("t={time}: {to} got a control request from non-parent {from}")]
    NotParent { time: Time, from: ClusterId, to: ClusterId },
    #[error("t={time}: token for {shard} held {count} times")]
    TokenConservation { time: Time, shard: ShardId, count: usize },
    #[error("t={time}: waits-for edge {from} -> {to} does not descend in height")]
    WaitsForOrder { time: Time, from: ClusterId, to: ClusterId },
    #[error("t={time}: account {account} occupancy out of balance")]
    Occupancy { time: Time, account: AccountId },
    #[error("t={time}: message delivered at {delivered} exceeds its bound {bound}")]
    DeliveryBound { time: Time, delivered: Time, bound: Time },
    #[error("t={time}: {detail}")]
    Other { time: Time, detail: String },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error("trace is not admissible: {0}")]
    Admissibility(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) | ScenarioError::Workload(_) | ScenarioError::Topology(_) => 2,
            ScenarioError::Cover(_) => 3,
            ScenarioError::Admissibility(_) => 4,
            ScenarioError::Protocol(_) => 5,
            ScenarioError::Io(_) => 2,
        }
    }
}
