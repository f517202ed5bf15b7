//! Single-leader scheduler.
//!
//! Home shards forward each transaction to the leader. The leader keeps a
//! pending queue, colors its conflict graph, and cuts a versioned batch
//! whenever the color count reaches the previous batch's length. Destinations
//! lock the batch's accounts, the leader pre-commits color group by color
//! group, and destinations append the ordered result to their ledgers.
//!
//! [`LeaderCore`] and [`Shards`] are reused per cluster by the multi-leader
//! scheduler.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::conflict::{greedy_color, Coloring, ConflictGraph};
use crate::error::ProtocolViolation;
use crate::simkernel::{Ctx, Message, Payload, Protocol, SubTransaction, VersionTag, DELTA_CONS};
use crate::types::{AccountId, ClusterId, ShardId, Time, Transaction, TxnId, TxnStatus};
use crate::workload::{format_access, InjectionTrace, INITIAL_BALANCE};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchedTimer {
    /// Leader finishes walking the color groups of a batch.
    Precommit { tag: VersionTag },
    /// Destination appends a pre-committed batch after its consensus step.
    Append { shard: ShardId, tag: VersionTag, commits: Vec<SubTransaction>, aborts: Vec<TxnId> },
}

fn advance(status: &mut [TxnStatus], id: TxnId, next: TxnStatus, now: Time) -> Result<(), ProtocolViolation> {
    let cur = &mut status[id.0 as usize];
    if !cur.can_advance_to(next) {
        return Err(ProtocolViolation::Other { time: now, detail: format!("{id}: {cur} -> {next}") });
    }
    *cur = next;
    Ok(())
}

#[derive(Clone, Debug)]
struct InFlight {
    txns: Vec<TxnId>,
    coloring: Coloring,
    awaiting: BTreeSet<ShardId>,
    values: BTreeMap<AccountId, i64>,
    /// Committed-side transactions and the destinations yet to confirm.
    unconfirmed: BTreeMap<TxnId, BTreeSet<ShardId>>,
    precommitted: bool,
}

/// Leader-side state of one scheduling domain.
#[derive(Clone, Debug)]
pub struct LeaderCore {
    pub cluster: ClusterId,
    pub leader: ShardId,
    pq: Vec<TxnId>,
    sq: BTreeSet<TxnId>,
    version: u64,
    last_event_sch_length: u64,
    latest: BTreeSet<TxnId>,
    in_flight: BTreeMap<u64, InFlight>,
    busy_until: Time,
    weight: u64,
    /// Unresolved scheduled transactions per shard.
    busy: BTreeMap<ShardId, usize>,
}

impl LeaderCore {
    pub fn new(cluster: ClusterId, leader: ShardId, weight: u64) -> Self {
        Self {
            cluster,
            leader,
            pq: Vec::new(),
            sq: BTreeSet::new(),
            version: 0,
            last_event_sch_length: 0,
            latest: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            busy_until: 0,
            weight,
            busy: BTreeMap::new(),
        }
    }

    pub fn pending(&self) -> &[TxnId] {
        &self.pq
    }

    pub fn scheduled(&self) -> &BTreeSet<TxnId> {
        &self.sq
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn last_event_sch_length(&self) -> u64 {
        self.last_event_sch_length
    }

    pub fn enqueue(&mut self, id: TxnId) {
        self.pq.push(id);
    }

    /// Shards accessed by pending transactions.
    pub fn pending_shards(&self, trace: &InjectionTrace) -> BTreeSet<ShardId> {
        self.pq.iter().flat_map(|&id| trace.get(id).shards()).collect()
    }

    /// True while some scheduled, unresolved transaction touches `shard`.
    pub fn is_busy(&self, shard: ShardId) -> bool {
        self.busy.get(&shard).is_some_and(|&n| n > 0)
    }

    /// Colors the pending queue; returns it when `lambda >= last_event_sch_length`.
    pub fn trigger(&self, trace: &InjectionTrace) -> Option<(ConflictGraph, Coloring)> {
        if self.pq.is_empty() {
            return None;
        }
        let g = ConflictGraph::build(self.pq.iter().map(|&id| trace.get(id)));
        let c = greedy_color(&g);
        (u64::from(c.lambda) >= self.last_event_sch_length).then_some((g, c))
    }

    /// Moves the whole pending queue into a new versioned batch and asks its
    /// destinations for account state.
    pub fn fire<T>(
        &mut self,
        ctx: &mut Ctx<'_, T>,
        graph: ConflictGraph,
        coloring: Coloring,
        status: &mut [TxnStatus],
    ) -> Result<VersionTag, ProtocolViolation> {
        let now = ctx.now();
        if !coloring.is_proper(&graph) || coloring.lambda as usize > graph.max_degree() + 1 {
            return Err(ProtocolViolation::Other { time: now, detail: "improper batch coloring".into() });
        }
        self.version += 1;
        let tag = VersionTag { cluster: self.cluster, version: self.version };
        let txns = std::mem::take(&mut self.pq);
        let mut per_dest: BTreeMap<ShardId, Vec<TxnId>> = BTreeMap::new();
        for &id in &txns {
            advance(status, id, TxnStatus::Scheduled, now)?;
            self.sq.insert(id);
            for s in ctx.txn(id).shards() {
                per_dest.entry(s).or_default().push(id);
                *self.busy.entry(s).or_default() += 1;
            }
        }
        self.latest = txns.iter().copied().collect();
        self.last_event_sch_length = u64::from(coloring.lambda);
        let awaiting = per_dest.keys().copied().collect();
        for (dest, ids) in per_dest {
            ctx.emit(self.leader, dest, Payload::AccountStateRequest { tag, txns: ids });
        }
        self.in_flight.insert(
            self.version,
            InFlight {
                txns,
                coloring,
                awaiting,
                values: BTreeMap::new(),
                unconfirmed: BTreeMap::new(),
                precommitted: false,
            },
        );
        Ok(tag)
    }

    fn flight(&mut self, tag: VersionTag, now: Time) -> Result<&mut InFlight, ProtocolViolation> {
        if tag.cluster != self.cluster {
            return Err(ProtocolViolation::UnknownVersion { time: now, cluster: tag.cluster, version: tag.version });
        }
        self.in_flight
            .get_mut(&tag.version)
            .ok_or(ProtocolViolation::UnknownVersion { time: now, cluster: tag.cluster, version: tag.version })
    }

    /// Collects account state; once every destination answered, the leader
    /// spends one unit per color group before emitting the batch.
    pub fn on_response(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        src: ShardId,
        tag: VersionTag,
        values: Vec<(AccountId, i64)>,
    ) -> Result<(), ProtocolViolation> {
        let now = ctx.now();
        let f = self.flight(tag, now)?;
        if !f.awaiting.remove(&src) {
            return Err(ProtocolViolation::Other { time: now, detail: format!("unexpected state from {src} for {tag}") });
        }
        f.values.extend(values);
        if f.awaiting.is_empty() {
            let lambda = Time::from(f.coloring.lambda);
            let at = now.max(self.busy_until) + lambda;
            self.busy_until = at;
            ctx.set_timer(at, SchedTimer::Precommit { tag });
        }
        Ok(())
    }

    fn resolve(&mut self, id: TxnId, t: &Transaction) {
        self.sq.remove(&id);
        for s in t.shards() {
            if let Some(n) = self.busy.get_mut(&s) {
                *n -= 1;
            }
        }
        if self.latest.remove(&id) {
            self.last_event_sch_length = self.last_event_sch_length.saturating_sub(self.weight);
        }
    }

    /// True when the trigger must be re-evaluated right away.
    pub fn should_retrigger(&self) -> bool {
        self.last_event_sch_length == 0 && !self.pq.is_empty()
    }

    /// Walks color groups in ascending order against the fetched state,
    /// pre-committing transactions whose guards hold and aborting the rest.
    pub fn on_precommit(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        tag: VersionTag,
        status: &mut [TxnStatus],
    ) -> Result<(), ProtocolViolation> {
        let now = ctx.now();
        let leader = self.leader;
        let f = self.flight(tag, now)?;
        let mut work = f.values.clone();
        let mut commits: Vec<(TxnId, u32)> = Vec::new();
        let mut aborts = Vec::new();
        for group in f.coloring.groups() {
            for i in group {
                let id = f.txns[i];
                let t = ctx.txn(id);
                let mut scratch: BTreeMap<AccountId, i64> = BTreeMap::new();
                let mut ok = true;
                for a in &t.accesses {
                    let v = scratch.get(&a.account).or(work.get(&a.account)).copied().unwrap_or(INITIAL_BALANCE);
                    let next = v + a.delta;
                    if !a.holds(v) || next < 0 {
                        ok = false;
                        break;
                    }
                    scratch.insert(a.account, next);
                }
                if ok {
                    work.extend(scratch);
                    commits.push((id, f.coloring.color_of(i)));
                } else {
                    aborts.push(id);
                }
            }
        }
        f.precommitted = true;
        let mut per_dest: BTreeMap<ShardId, (Vec<SubTransaction>, Vec<TxnId>)> = BTreeMap::new();
        for &(id, color) in &commits {
            let t = ctx.txn(id);
            let shards = t.shards();
            for &s in &shards {
                per_dest.entry(s).or_default().0.push(SubTransaction::of(t, s, tag, color));
            }
            f.unconfirmed.insert(id, shards);
        }
        for &id in &aborts {
            for s in ctx.txn(id).shards() {
                per_dest.entry(s).or_default().1.push(id);
            }
        }
        let done = f.unconfirmed.is_empty();
        for (dest, (commits, aborts)) in per_dest {
            ctx.emit(leader, dest, Payload::SendPrecommitBatch { tag, commits, aborts });
        }
        for &(id, _) in &commits {
            advance(status, id, TxnStatus::Precommitted, now)?;
        }
        for id in aborts {
            advance(status, id, TxnStatus::Aborted, now)?;
            ctx.record_abort(id)?;
            let t = ctx.txn(id).clone();
            self.resolve(id, &t);
        }
        if done {
            self.in_flight.remove(&tag.version);
        }
        Ok(())
    }

    pub fn on_final_commit(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        src: ShardId,
        tag: VersionTag,
        id: TxnId,
        status: &mut [TxnStatus],
    ) -> Result<(), ProtocolViolation> {
        let now = ctx.now();
        let f = self.flight(tag, now)?;
        let dup = ProtocolViolation::DuplicateConfirmation { time: now, txn: id, shard: src };
        let waiting = f.unconfirmed.get_mut(&id).ok_or(dup.clone())?;
        if !waiting.remove(&src) {
            return Err(dup);
        }
        if waiting.is_empty() {
            f.unconfirmed.remove(&id);
            let finished = f.precommitted && f.unconfirmed.is_empty();
            if finished {
                self.in_flight.remove(&tag.version);
            }
            advance(status, id, TxnStatus::Committed, now)?;
            let t = ctx.txn(id).clone();
            self.resolve(id, &t);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct AccountState {
    value: i64,
    occupant: Option<VersionTag>,
    occupied: u64,
    released: u64,
}

#[derive(Clone, Debug)]
struct StateRequest {
    tag: VersionTag,
    leader: ShardId,
    accounts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub time: Time,
    pub version: VersionTag,
    pub subtxns: Vec<SubTransaction>,
}

/// One destination shard: account values, occupancy, deferred requests, ledger.
#[derive(Clone, Debug)]
pub struct DestinationState {
    pub shard: ShardId,
    accounts: BTreeMap<u32, AccountState>,
    waits: BTreeMap<u32, VecDeque<u64>>,
    requests: BTreeMap<u64, StateRequest>,
    next_request: u64,
    held: BTreeMap<VersionTag, (ShardId, Vec<u32>)>,
    ledger: Vec<LedgerEntry>,
}

impl DestinationState {
    pub fn new(shard: ShardId) -> Self {
        Self {
            shard,
            accounts: BTreeMap::new(),
            waits: BTreeMap::new(),
            requests: BTreeMap::new(),
            next_request: 0,
            held: BTreeMap::new(),
            ledger: Vec::new(),
        }
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn balance(&self, index: u32) -> i64 {
        self.accounts.get(&index).map_or(INITIAL_BALANCE, |a| a.value)
    }

    pub fn occupant(&self, index: u32) -> Option<VersionTag> {
        self.accounts.get(&index).and_then(|a| a.occupant)
    }

    /// Requests queued behind occupied accounts.
    pub fn deferred(&self) -> usize {
        self.requests.len()
    }

    fn account(&mut self, index: u32) -> &mut AccountState {
        self.accounts
            .entry(index)
            .or_insert(AccountState { value: INITIAL_BALANCE, occupant: None, occupied: 0, released: 0 })
    }

    pub fn on_request<T>(
        &mut self,
        ctx: &mut Ctx<'_, T>,
        leader: ShardId,
        tag: VersionTag,
        txns: &[TxnId],
    ) -> Result<(), ProtocolViolation> {
        let mut accounts = BTreeSet::new();
        for &id in txns {
            let t = ctx.txn(id);
            let before = accounts.len();
            accounts.extend(t.accesses_on(self.shard).map(|a| a.account.index));
            if accounts.len() == before && t.accesses_on(self.shard).next().is_none() {
                return Err(ProtocolViolation::ForeignAccount {
                    time: ctx.now(),
                    shard: self.shard,
                    account: t.accesses[0].account,
                });
            }
        }
        let seq = self.next_request;
        self.next_request += 1;
        for &a in &accounts {
            self.waits.entry(a).or_default().push_back(seq);
        }
        self.requests.insert(seq, StateRequest { tag, leader, accounts: accounts.into_iter().collect() });
        self.try_fire(ctx, seq);
        Ok(())
    }

    /// Grants `seq` if it heads every queue it sits in and all its accounts are free.
    fn try_fire<T>(&mut self, ctx: &mut Ctx<'_, T>, seq: u64) -> bool {
        let Some(req) = self.requests.get(&seq) else { return false };
        let ready = req.accounts.iter().all(|a| {
            self.waits.get(a).and_then(|q| q.front()) == Some(&seq)
                && self.accounts.get(a).is_none_or(|s| s.occupant.is_none())
        });
        if !ready {
            return false;
        }
        let req = self.requests.remove(&seq).unwrap();
        let shard = self.shard;
        let mut values = Vec::with_capacity(req.accounts.len());
        for &a in &req.accounts {
            self.waits.get_mut(&a).unwrap().pop_front();
            let st = self.account(a);
            st.occupant = Some(req.tag);
            st.occupied += 1;
            values.push((AccountId { shard, index: a }, st.value));
        }
        ctx.emit(self.shard, req.leader, Payload::AccountStateResponse { tag: req.tag, values });
        self.held.insert(req.tag, (req.leader, req.accounts));
        true
    }

    pub fn on_batch(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        tag: VersionTag,
        commits: Vec<SubTransaction>,
        aborts: Vec<TxnId>,
    ) -> Result<(), ProtocolViolation> {
        if !self.held.contains_key(&tag) {
            return Err(ProtocolViolation::VersionMismatch {
                time: ctx.now(),
                shard: self.shard,
                cluster: tag.cluster,
                version: tag.version,
            });
        }
        let at = ctx.now() + DELTA_CONS;
        ctx.set_timer(at, SchedTimer::Append { shard: self.shard, tag, commits, aborts });
        Ok(())
    }

    /// Applies the batch, appends it, confirms each subtransaction, frees the
    /// batch's accounts and wakes deferred requests.
    pub fn on_append(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        tag: VersionTag,
        commits: Vec<SubTransaction>,
    ) -> Result<(), ProtocolViolation> {
        let now = ctx.now();
        let mismatch = ProtocolViolation::VersionMismatch {
            time: now,
            shard: self.shard,
            cluster: tag.cluster,
            version: tag.version,
        };
        let (leader, accounts) = self.held.remove(&tag).ok_or(mismatch.clone())?;
        for sub in &commits {
            for op in &sub.ops {
                if op.account.shard != self.shard {
                    return Err(ProtocolViolation::ForeignAccount { time: now, shard: self.shard, account: op.account });
                }
                let st = self.account(op.account.index);
                if st.occupant != Some(tag) {
                    return Err(mismatch);
                }
                if !op.holds(st.value) {
                    return Err(ProtocolViolation::Other {
                        time: now,
                        detail: format!("guard on {} failed at append of {}", op.account, sub.parent),
                    });
                }
                st.value += op.delta;
                if st.value < 0 {
                    return Err(ProtocolViolation::NegativeBalance { time: now, account: op.account, value: st.value });
                }
            }
        }
        for sub in &commits {
            ctx.record_append(sub.parent)?;
            ctx.emit(self.shard, leader, Payload::FinalCommitResponse { tag, txn: sub.parent });
        }
        if !commits.is_empty() {
            self.ledger.push(LedgerEntry { time: now, version: tag, subtxns: commits });
        }
        for &a in &accounts {
            let st = self.account(a);
            if st.occupant != Some(tag) {
                return Err(ProtocolViolation::Occupancy { time: now, account: AccountId { shard: self.shard, index: a } });
            }
            st.occupant = None;
            st.released += 1;
        }
        let mut woken: Vec<u64> = accounts.iter().filter_map(|a| self.waits.get(a)?.front().copied()).collect();
        woken.sort_unstable();
        woken.dedup();
        for seq in woken {
            self.try_fire(ctx, seq);
        }
        Ok(())
    }

    /// Occupancy is held by exactly the in-flight versions, and occupy/release
    /// counts balance on every free account.
    pub fn check_occupancy(&self, now: Time) -> Result<(), ProtocolViolation> {
        let mut owned = BTreeMap::new();
        for (tag, (_, accts)) in &self.held {
            for &a in accts {
                if owned.insert(a, *tag).is_some() {
                    return Err(ProtocolViolation::Occupancy { time: now, account: AccountId { shard: self.shard, index: a } });
                }
            }
        }
        for (&a, st) in &self.accounts {
            let open = st.occupied - st.released;
            if st.occupant != owned.get(&a).copied() || open != u64::from(st.occupant.is_some()) {
                return Err(ProtocolViolation::Occupancy { time: now, account: AccountId { shard: self.shard, index: a } });
            }
        }
        Ok(())
    }

    /// `time version txn subtxn_ops` per ledger subtransaction.
    pub fn dump_ledger(&self) -> String {
        let mut out = String::new();
        for e in &self.ledger {
            for sub in &e.subtxns {
                let ops: Vec<String> = sub.ops.iter().map(format_access).collect();
                let _ = writeln!(out, "{} {} {} {}", e.time, e.version, sub.parent.0, ops.join(";"));
            }
        }
        out
    }
}

/// Destination shards plus the global lifecycle of every transaction.
#[derive(Clone, Debug)]
pub struct Shards {
    pub dests: Vec<DestinationState>,
    pub status: Vec<TxnStatus>,
}

impl Shards {
    pub fn new(shards: u32, txns: usize) -> Self {
        Self {
            dests: (0..shards).map(|s| DestinationState::new(ShardId(s))).collect(),
            status: vec![TxnStatus::Pending; txns],
        }
    }

    /// Handles destination-side messages; returns the message back if it is leader-bound.
    pub fn on_destination_message(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        msg: Message,
    ) -> Result<Option<Message>, ProtocolViolation> {
        let dst = msg.dst.index();
        match msg.payload {
            Payload::AccountStateRequest { tag, ref txns } => {
                self.dests[dst].on_request(ctx, msg.src, tag, txns)?;
                Ok(None)
            }
            Payload::SendPrecommitBatch { tag, commits, aborts } => {
                self.dests[dst].on_batch(ctx, tag, commits, aborts)?;
                Ok(None)
            }
            _ => Ok(Some(msg)),
        }
    }

    pub fn check(&self, now: Time) -> Result<(), ProtocolViolation> {
        self.dests.iter().try_for_each(|d| d.check_occupancy(now))
    }
}

/// The whole single-leader protocol: one leader core plus all destinations.
#[derive(Clone, Debug)]
pub struct SingleLeader {
    pub core: LeaderCore,
    pub shards: Shards,
}

impl SingleLeader {
    pub fn new(shards: u32, txns: usize, leader: ShardId, weight: u64) -> Self {
        Self { core: LeaderCore::new(ClusterId(0), leader, weight), shards: Shards::new(shards, txns) }
    }

    fn try_schedule(&mut self, ctx: &mut Ctx<'_, SchedTimer>) -> Result<(), ProtocolViolation> {
        if let Some((g, c)) = self.core.trigger(ctx.trace) {
            self.core.fire(ctx, g, c, &mut self.shards.status)?;
        }
        Ok(())
    }
}

impl Protocol for SingleLeader {
    type Timer = SchedTimer;

    fn on_inject(&mut self, ctx: &mut Ctx<'_, SchedTimer>, txn: &Transaction) -> Result<(), ProtocolViolation> {
        ctx.emit(txn.home, self.core.leader, Payload::TransactionSend { txn: txn.id, cluster: self.core.cluster });
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, SchedTimer>, msg: Message) -> Result<(), ProtocolViolation> {
        let Some(msg) = self.shards.on_destination_message(ctx, msg)? else { return Ok(()) };
        let now = ctx.now();
        match msg.payload {
            Payload::TransactionSend { txn, .. } => {
                self.core.enqueue(txn);
                self.try_schedule(ctx)
            }
            Payload::AccountStateResponse { tag, values } => self.core.on_response(ctx, msg.src, tag, values),
            Payload::FinalCommitResponse { tag, txn } => {
                self.core.on_final_commit(ctx, msg.src, tag, txn, &mut self.shards.status)?;
                if self.core.should_retrigger() {
                    self.try_schedule(ctx)?;
                }
                Ok(())
            }
            other => Err(ProtocolViolation::Other { time: now, detail: format!("single leader got {}", other.kind()) }),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, SchedTimer>, timer: SchedTimer) -> Result<(), ProtocolViolation> {
        match timer {
            SchedTimer::Precommit { tag } => {
                self.core.on_precommit(ctx, tag, &mut self.shards.status)?;
                if self.core.should_retrigger() {
                    self.try_schedule(ctx)?;
                }
                Ok(())
            }
            SchedTimer::Append { shard, tag, commits, .. } => self.shards.dests[shard.index()].on_append(ctx, tag, commits),
        }
    }

    fn check(&mut self, now: Time) -> Result<(), ProtocolViolation> {
        self.shards.check(now)
    }
}
