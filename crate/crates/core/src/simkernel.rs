//! Deterministic discrete-event engine with bounded, partially synchronous delays.
//!
//! Time is integral. Each unit: injections due now, then every event due now in
//! `(time, seq)` order (handlers may add more events at the current unit), then
//! invariant checks. Channels are FIFO per ordered shard pair.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ProtocolViolation;
use crate::topology::ShardGraph;
use crate::types::{Access, ClusterId, ShardId, Time, Transaction, TxnId, TxnStatus};
use crate::workload::InjectionTrace;

/// Intra-shard agreement cost.
pub const DELTA_CONS: Time = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMode {
    Deterministic,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayModel {
    pub mode: DelayMode,
    pub frak_d: Time,
    pub gst: Time,
    pub per_hop: Time,
    pub seed: u64,
}

impl DelayModel {
    pub fn deterministic(frak_d: Time) -> Self {
        Self { mode: DelayMode::Deterministic, frak_d, gst: 0, per_hop: 1, seed: 0 }
    }

    pub fn uniform(frak_d: Time, seed: u64) -> Self {
        Self { mode: DelayMode::Uniform, frak_d, gst: 0, per_hop: 1, seed }
    }

    /// Delivery time before channel ordering. Self-messages take one unit.
    pub fn deliver_time(&self, emit: Time, dist: u32, msg_id: u64) -> Time {
        let base = emit.max(self.gst);
        if dist == 0 {
            return base + DELTA_CONS;
        }
        match self.mode {
            DelayMode::Deterministic => base + self.frak_d.min(DELTA_CONS + u64::from(dist) * self.per_hop),
            DelayMode::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(msg_id);
                base + DELTA_CONS + rng.gen_range(1..=self.frak_d - DELTA_CONS)
            }
        }
    }

    /// Latest admissible delivery for a message emitted at `emit`.
    pub fn bound(&self, emit: Time) -> Time {
        emit.max(self.gst) + self.frak_d
    }
}

/// Batch version, scoped to the cluster whose leader issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionTag {
    pub cluster: ClusterId,
    pub version: u64,
}

impl fmt::Display for VersionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.cluster.0, self.version)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTransaction {
    pub parent: TxnId,
    pub shard: ShardId,
    pub ops: Vec<Access>,
    pub version: VersionTag,
    pub color: u32,
}

impl SubTransaction {
    pub fn of(t: &Transaction, shard: ShardId, version: VersionTag, color: u32) -> Self {
        Self { parent: t.id, shard, ops: t.accesses_on(shard).copied().collect(), version, color }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    TransactionSend,
    AccountStateRequest,
    AccountStateResponse,
    SendPrecommitBatch,
    FinalCommitResponse,
    ScheduleControlRequest,
    ScheduleControlResponse,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MessageKind::TransactionSend => "transaction_send",
            MessageKind::AccountStateRequest => "account_state_request",
            MessageKind::AccountStateResponse => "account_state_response",
            MessageKind::SendPrecommitBatch => "send_precommit_batch",
            MessageKind::FinalCommitResponse => "final_commit_response",
            MessageKind::ScheduleControlRequest => "schedule_control_request",
            MessageKind::ScheduleControlResponse => "schedule_control_response",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    TransactionSend { txn: TxnId, cluster: ClusterId },
    AccountStateRequest { tag: VersionTag, txns: Vec<TxnId> },
    AccountStateResponse { tag: VersionTag, values: Vec<(crate::types::AccountId, i64)> },
    SendPrecommitBatch { tag: VersionTag, commits: Vec<SubTransaction>, aborts: Vec<TxnId> },
    FinalCommitResponse { tag: VersionTag, txn: TxnId },
    ScheduleControlRequest { from: ClusterId, to: ClusterId, shards: Vec<ShardId> },
    /// `grant` moves tokens up to a requesting parent; otherwise they are released down.
    ScheduleControlResponse { from: ClusterId, to: ClusterId, shards: Vec<ShardId>, grant: bool },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::TransactionSend { .. } => MessageKind::TransactionSend,
            Payload::AccountStateRequest { .. } => MessageKind::AccountStateRequest,
            Payload::AccountStateResponse { .. } => MessageKind::AccountStateResponse,
            Payload::SendPrecommitBatch { .. } => MessageKind::SendPrecommitBatch,
            Payload::FinalCommitResponse { .. } => MessageKind::FinalCommitResponse,
            Payload::ScheduleControlRequest { .. } => MessageKind::ScheduleControlRequest,
            Payload::ScheduleControlResponse { .. } => MessageKind::ScheduleControlResponse,
        }
    }

    pub fn version(&self) -> Option<VersionTag> {
        match self {
            Payload::AccountStateRequest { tag, .. }
            | Payload::AccountStateResponse { tag, .. }
            | Payload::SendPrecommitBatch { tag, .. }
            | Payload::FinalCommitResponse { tag, .. } => Some(*tag),
            _ => None,
        }
    }

    fn txn_ids(&self) -> Vec<TxnId> {
        match self {
            Payload::TransactionSend { txn, .. } | Payload::FinalCommitResponse { txn, .. } => vec![*txn],
            Payload::AccountStateRequest { txns, .. } => txns.clone(),
            Payload::SendPrecommitBatch { commits, aborts, .. } => {
                commits.iter().map(|s| s.parent).chain(aborts.iter().copied()).collect()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    pub src: ShardId,
    pub dst: ShardId,
    pub emit_time: Time,
    pub deliver_time: Time,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

enum Event<T> {
    Deliver(Message),
    Timer(T),
}

/// Scheduler state machine driven by the engine.
pub trait Protocol {
    type Timer;

    fn on_inject(&mut self, ctx: &mut Ctx<'_, Self::Timer>, txn: &Transaction) -> Result<(), ProtocolViolation>;
    fn on_message(&mut self, ctx: &mut Ctx<'_, Self::Timer>, msg: Message) -> Result<(), ProtocolViolation>;
    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self::Timer>, timer: Self::Timer) -> Result<(), ProtocolViolation>;
    /// Invariants asserted after each unit in which something happened.
    fn check(&mut self, now: Time) -> Result<(), ProtocolViolation>;
}

struct State<T> {
    now: Time,
    seq: u64,
    queue: BTreeMap<(Time, u64), Event<T>>,
    channels: HashMap<(ShardId, ShardId), Time>,
    in_flight: u64,
    emitted: u64,
    done: Vec<Option<(Time, TxnStatus)>>,
    appends_left: Vec<u32>,
    events: Option<String>,
}

/// Handler-side view of the engine.
pub struct Ctx<'e, T> {
    st: &'e mut State<T>,
    pub graph: &'e ShardGraph,
    pub trace: &'e InjectionTrace,
    delay: &'e DelayModel,
}

impl<T> Ctx<'_, T> {
    pub fn now(&self) -> Time {
        self.st.now
    }

    pub fn txn(&self, id: TxnId) -> &Transaction {
        self.trace.get(id)
    }

    pub fn emit(&mut self, src: ShardId, dst: ShardId, payload: Payload) {
        let id = self.st.seq;
        self.st.seq += 1;
        let now = self.st.now;
        let computed = self.delay.deliver_time(now, self.graph.dist(src, dst), id);
        let chan = self.st.channels.entry((src, dst)).or_insert(0);
        let deliver_time = computed.max(*chan);
        *chan = deliver_time;
        let msg = Message { id, src, dst, emit_time: now, deliver_time, payload };
        self.st.in_flight += 1;
        self.st.emitted += 1;
        self.st.queue.insert((deliver_time, id), Event::Deliver(msg));
    }

    /// Fires at `at >= now`; a timer for the current unit runs after events already queued.
    pub fn set_timer(&mut self, at: Time, timer: T) {
        debug_assert!(at >= self.st.now);
        let id = self.st.seq;
        self.st.seq += 1;
        self.st.queue.insert((at.max(self.st.now), id), Event::Timer(timer));
    }

    /// One destination ledger now holds `txn`. The last append commits it.
    pub fn record_append(&mut self, txn: TxnId) -> Result<(), ProtocolViolation> {
        let left = &mut self.st.appends_left[txn.0 as usize];
        if *left == 0 {
            return Err(ProtocolViolation::Other { time: self.st.now, detail: format!("{txn} appended too often") });
        }
        *left -= 1;
        if *left == 0 {
            self.finish(txn, TxnStatus::Committed)?;
        }
        Ok(())
    }

    pub fn record_abort(&mut self, txn: TxnId) -> Result<(), ProtocolViolation> {
        self.finish(txn, TxnStatus::Aborted)
    }

    fn finish(&mut self, txn: TxnId, status: TxnStatus) -> Result<(), ProtocolViolation> {
        let slot = &mut self.st.done[txn.0 as usize];
        if slot.is_some() {
            return Err(ProtocolViolation::Other { time: self.st.now, detail: format!("{txn} finished twice") });
        }
        *slot = Some((self.st.now, status));
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EngineSetup<'a> {
    pub graph: &'a ShardGraph,
    pub trace: &'a InjectionTrace,
    pub delay: DelayModel,
    pub record_events: bool,
}

/// Raw engine output; `metrics::MetricsLog` derives the per-unit series from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunRecord {
    pub until: Time,
    /// Messages queued but undelivered at the end of each unit.
    pub in_flight: Vec<u64>,
    /// Completion time and outcome per transaction id.
    pub done: Vec<Option<(Time, TxnStatus)>>,
    pub messages_emitted: u64,
    pub undelivered: u64,
    /// `time kind src dst version txn_ids` lines.
    pub event_trace: Option<String>,
}

/// Drives `proto` through units `0..=until`.
pub fn run<P: Protocol>(proto: &mut P, setup: &EngineSetup<'_>, until: Time) -> Result<RunRecord, ProtocolViolation> {
    let trace = setup.trace;
    let mut st: State<P::Timer> = State {
        now: 0,
        seq: 0,
        queue: BTreeMap::new(),
        channels: HashMap::new(),
        in_flight: 0,
        emitted: 0,
        done: vec![None; trace.txns.len()],
        appends_left: trace.txns.iter().map(|t| t.shards().len() as u32).collect(),
        events: setup.record_events.then(String::new),
    };
    let mut in_flight = Vec::with_capacity(until as usize + 1);
    let mut next_txn = 0;

    for now in 0..=until {
        st.now = now;
        let mut active = false;
        while next_txn < trace.txns.len() && trace.txns[next_txn].gen_time <= now {
            let t = &trace.txns[next_txn];
            next_txn += 1;
            if t.gen_time < now {
                continue;
            }
            active = true;
            let mut ctx = Ctx { st: &mut st, graph: setup.graph, trace, delay: &setup.delay };
            proto.on_inject(&mut ctx, t)?;
        }
        loop {
            let Some(entry) = st.queue.first_entry() else { break };
            if entry.key().0 != now {
                break;
            }
            let event = entry.remove();
            active = true;
            match event {
                Event::Deliver(msg) => {
                    st.in_flight -= 1;
                    let bound = setup.delay.bound(msg.emit_time);
                    if msg.deliver_time > bound {
                        return Err(ProtocolViolation::DeliveryBound { time: now, delivered: msg.deliver_time, bound });
                    }
                    if let Some(out) = st.events.as_mut() {
                        let version = msg.payload.version().map_or_else(|| "-".to_string(), |v| v.to_string());
                        let ids: Vec<String> = msg.payload.txn_ids().iter().map(|t| t.0.to_string()).collect();
                        let ids = if ids.is_empty() { "-".to_string() } else { ids.join(",") };
                        let _ = writeln!(out, "{now} {} {} {} {version} {ids}", msg.kind(), msg.src.0, msg.dst.0);
                    }
                    let mut ctx = Ctx { st: &mut st, graph: setup.graph, trace, delay: &setup.delay };
                    proto.on_message(&mut ctx, msg)?;
                }
                Event::Timer(timer) => {
                    let mut ctx = Ctx { st: &mut st, graph: setup.graph, trace, delay: &setup.delay };
                    proto.on_timer(&mut ctx, timer)?;
                }
            }
        }
        if active {
            proto.check(now)?;
        }
        in_flight.push(st.in_flight);
    }

    Ok(RunRecord {
        until,
        in_flight,
        done: st.done,
        messages_emitted: st.emitted,
        undelivered: st.in_flight,
        event_trace: st.events,
    })
}
