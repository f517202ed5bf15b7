//! Multi-leader scheduler over a cluster hierarchy.
//!
//! Every cluster runs its own [`LeaderCore`]. A transaction goes to the leader
//! of its home cluster. Before cutting a batch, a leader must hold the
//! schedule-control token of every shard the batch touches.
//!
//! Tokens move only along a shard's chain (the clusters containing it, by
//! ascending height). A leader requests a missing token from its chain child.
//! A holder that is not busy with the token grants it up to a requesting
//! parent, even when it wants the token itself, so requests only ever wait on
//! lower clusters. A token nobody above or at a cluster wants is released back
//! down toward the shard's singleton.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::cover::{home_cluster, ClusterHierarchy};
use crate::error::ProtocolViolation;
use crate::sched_single::{LeaderCore, SchedTimer, Shards};
use crate::simkernel::{Ctx, Message, Payload, Protocol, VersionTag};
use crate::types::{ClusterId, ShardId, Time, Transaction, TxnId};

#[derive(Clone, Debug)]
pub struct ClusterState {
    pub core: LeaderCore,
    tokens: BTreeSet<ShardId>,
    /// Tokens requested from chain children and not yet granted.
    outstanding_down: BTreeSet<ShardId>,
    /// Tokens the chain parent asked for; the flag records the one
    /// opportunistic batch already spent on it.
    parent_waiting: BTreeMap<ShardId, bool>,
}

impl ClusterState {
    pub fn tokens(&self) -> &BTreeSet<ShardId> {
        &self.tokens
    }
}

/// Per-shard token placement, for conservation and waits-for checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlState {
    /// shard -> clusters currently holding its token
    pub holders: Vec<Vec<ClusterId>>,
    /// shard -> sender of a token still on the wire
    pub in_transit: BTreeMap<ShardId, ClusterId>,
    /// cluster -> chain child it awaits a token from
    pub waits_for: Vec<(ClusterId, ClusterId)>,
}

#[derive(Clone, Debug)]
pub struct MultiLeader<'h> {
    h: &'h ClusterHierarchy,
    pub clusters: Vec<ClusterState>,
    pub shards: Shards,
    in_transit: BTreeMap<ShardId, ClusterId>,
    control_trace: Option<String>,
    /// Every batch cut: time, version, members.
    pub fired: Vec<(Time, VersionTag, Vec<TxnId>)>,
    /// Longest waits-for path seen, in edges.
    pub max_wait_depth: usize,
    pub waits_for_checks: u64,
}

impl<'h> MultiLeader<'h> {
    pub fn new(h: &'h ClusterHierarchy, shards: u32, txns: usize, weight: u64, record_control: bool) -> Self {
        let clusters = h
            .clusters()
            .iter()
            .map(|c| ClusterState {
                core: LeaderCore::new(c.id, c.leader, weight),
                tokens: if h.is_bottom(c.id) { c.members.clone() } else { BTreeSet::new() },
                outstanding_down: BTreeSet::new(),
                parent_waiting: BTreeMap::new(),
            })
            .collect();
        Self {
            h,
            clusters,
            shards: Shards::new(shards, txns),
            in_transit: BTreeMap::new(),
            control_trace: record_control.then(String::new),
            fired: Vec::new(),
            max_wait_depth: 0,
            waits_for_checks: 0,
        }
    }

    /// `time kind from_cluster to_cluster shards` lines.
    pub fn control_trace(&self) -> Option<&str> {
        self.control_trace.as_deref()
    }

    fn log(&mut self, now: Time, kind: &str, from: ClusterId, to: ClusterId, shards: &[ShardId]) {
        if let Some(out) = self.control_trace.as_mut() {
            let s: Vec<String> = shards.iter().map(|x| x.0.to_string()).collect();
            let _ = writeln!(out, "{now} {kind} {} {} {}", from.0, to.0, s.join(","));
        }
    }

    fn send_control(&mut self, ctx: &mut Ctx<'_, SchedTimer>, from: ClusterId, to: ClusterId, shards: Vec<ShardId>, kind: &str) {
        let src = self.h.cluster(from).leader;
        let dst = self.h.cluster(to).leader;
        self.log(ctx.now(), kind, from, to, &shards);
        let payload = match kind {
            "request" => Payload::ScheduleControlRequest { from, to, shards },
            _ => {
                for &x in &shards {
                    self.in_transit.insert(x, from);
                }
                Payload::ScheduleControlResponse { from, to, shards, grant: kind == "grant" }
            }
        };
        ctx.emit(src, dst, payload);
    }

    fn step(&mut self, ctx: &mut Ctx<'_, SchedTimer>, c: ClusterId) -> Result<(), ProtocolViolation> {
        self.evaluate(ctx, c)?;
        self.settle(ctx, c);
        Ok(())
    }

    /// Cuts a batch when the trigger holds and every needed token is usable;
    /// otherwise asks chain children for the missing ones.
    fn evaluate(&mut self, ctx: &mut Ctx<'_, SchedTimer>, c: ClusterId) -> Result<(), ProtocolViolation> {
        let st = &self.clusters[c.0 as usize];
        let Some((graph, coloring)) = st.core.trigger(ctx.trace) else { return Ok(()) };
        let needed = st.core.pending_shards(ctx.trace);
        let usable = |x: &ShardId| st.tokens.contains(x) && st.parent_waiting.get(x) != Some(&true);
        if needed.iter().all(usable) {
            let st = &mut self.clusters[c.0 as usize];
            let batch = st.core.pending().to_vec();
            let tag = st.core.fire(ctx, graph, coloring, &mut self.shards.status)?;
            for x in &needed {
                if let Some(used) = st.parent_waiting.get_mut(x) {
                    *used = true;
                }
            }
            self.fired.push((ctx.now(), tag, batch));
            return Ok(());
        }
        if self.h.is_bottom(c) {
            return Ok(());
        }
        let mut asks: BTreeMap<ClusterId, Vec<ShardId>> = BTreeMap::new();
        let st = &mut self.clusters[c.0 as usize];
        for &x in &needed {
            if st.tokens.contains(&x) || st.outstanding_down.contains(&x) {
                continue;
            }
            let child = self.h.chain_child(c, x).expect("non-bottom cluster has a chain child");
            asks.entry(child).or_default().push(x);
            st.outstanding_down.insert(x);
        }
        for (child, shards) in asks {
            self.send_control(ctx, c, child, shards, "request");
        }
        Ok(())
    }

    /// Decides, per held token, whether to keep it, grant it up, or release it down.
    fn settle(&mut self, ctx: &mut Ctx<'_, SchedTimer>, c: ClusterId) {
        let st = &self.clusters[c.0 as usize];
        let need = st.core.pending_shards(ctx.trace);
        let bottom = self.h.is_bottom(c);
        let mut up: BTreeMap<ClusterId, Vec<ShardId>> = BTreeMap::new();
        let mut down: BTreeMap<ClusterId, Vec<ShardId>> = BTreeMap::new();
        for &x in &st.tokens {
            if st.core.is_busy(x) {
                continue;
            }
            if st.parent_waiting.contains_key(&x) {
                up.entry(self.h.chain_parent(c, x).expect("waiting parent exists")).or_default().push(x);
            } else if !need.contains(&x) && !bottom {
                down.entry(self.h.chain_child(c, x).expect("non-bottom cluster has a chain child")).or_default().push(x);
            }
        }
        let st = &mut self.clusters[c.0 as usize];
        for &x in up.values().flatten() {
            st.tokens.remove(&x);
            st.parent_waiting.remove(&x);
        }
        for &x in down.values().flatten() {
            st.tokens.remove(&x);
            st.outstanding_down.remove(&x);
        }
        for (p, shards) in up {
            self.send_control(ctx, c, p, shards, "grant");
        }
        for (child, shards) in down {
            self.send_control(ctx, c, child, shards, "release");
        }
    }

    fn on_control_request(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        from: ClusterId,
        to: ClusterId,
        shards: Vec<ShardId>,
    ) -> Result<(), ProtocolViolation> {
        let now = ctx.now();
        let mut forward: BTreeMap<ClusterId, Vec<ShardId>> = BTreeMap::new();
        let bottom = self.h.is_bottom(to);
        let st = &mut self.clusters[to.0 as usize];
        for x in shards {
            if self.h.chain_parent(to, x) != Some(from) {
                return Err(ProtocolViolation::NotParent { time: now, from, to });
            }
            st.parent_waiting.entry(x).or_insert(false);
            if !st.tokens.contains(&x) && !st.outstanding_down.contains(&x) && !bottom {
                let child = self.h.chain_child(to, x).expect("non-bottom cluster has a chain child");
                forward.entry(child).or_default().push(x);
                st.outstanding_down.insert(x);
            }
        }
        for (child, shards) in forward {
            self.send_control(ctx, to, child, shards, "request");
        }
        self.step(ctx, to)
    }

    fn on_control_response(
        &mut self,
        ctx: &mut Ctx<'_, SchedTimer>,
        from: ClusterId,
        to: ClusterId,
        shards: Vec<ShardId>,
        grant: bool,
    ) -> Result<(), ProtocolViolation> {
        let now = ctx.now();
        let st = &mut self.clusters[to.0 as usize];
        for x in shards {
            if self.in_transit.remove(&x) != Some(from) {
                return Err(ProtocolViolation::TokenConservation { time: now, shard: x, count: 0 });
            }
            if grant {
                if self.h.chain_child(to, x) != Some(from) || !st.outstanding_down.remove(&x) {
                    return Err(ProtocolViolation::UnrequestedControl { time: now, cluster: to, shard: x });
                }
            } else {
                if self.h.chain_parent(to, x) != Some(from) {
                    return Err(ProtocolViolation::NotParent { time: now, from, to });
                }
                st.parent_waiting.remove(&x);
            }
            if !st.tokens.insert(x) {
                return Err(ProtocolViolation::TokenConservation { time: now, shard: x, count: 2 });
            }
        }
        self.step(ctx, to)
    }

    pub fn control_state(&self) -> ControlState {
        let mut holders = vec![Vec::new(); self.shards.dests.len()];
        let mut waits_for = Vec::new();
        for (i, st) in self.clusters.iter().enumerate() {
            let c = ClusterId(i as u32);
            for x in &st.tokens {
                holders[x.index()].push(c);
            }
            for &x in &st.outstanding_down {
                if let Some(child) = self.h.chain_child(c, x) {
                    waits_for.push((c, child));
                }
            }
        }
        waits_for.sort_unstable();
        waits_for.dedup();
        ControlState { holders, in_transit: self.in_transit.clone(), waits_for }
    }
}

/// Every shard's token sits with exactly one cluster or on exactly one wire.
pub fn check_token_conservation(state: &ControlState, now: Time) -> Result<(), ProtocolViolation> {
    for (x, hs) in state.holders.iter().enumerate() {
        let shard = ShardId(x as u32);
        let count = hs.len() + usize::from(state.in_transit.contains_key(&shard));
        if count != 1 {
            return Err(ProtocolViolation::TokenConservation { time: now, shard, count });
        }
    }
    Ok(())
}

/// Every waits-for edge must point to a strictly lower height, which makes the
/// relation acyclic. Also confirms acyclicity directly and returns the longest
/// path length in edges.
pub fn check_waits_for_acyclic(
    h: &ClusterHierarchy,
    edges: &[(ClusterId, ClusterId)],
    now: Time,
) -> Result<usize, ProtocolViolation> {
    for &(from, to) in edges {
        if h.cluster(to).height >= h.cluster(from).height {
            return Err(ProtocolViolation::WaitsForOrder { time: now, from, to });
        }
    }
    // longest path by memoized DFS; a gray revisit is a cycle
    let mut out: BTreeMap<ClusterId, Vec<ClusterId>> = BTreeMap::new();
    for &(a, b) in edges {
        out.entry(a).or_default().push(b);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Gray,
        Done(usize),
    }
    fn depth(
        c: ClusterId,
        out: &BTreeMap<ClusterId, Vec<ClusterId>>,
        marks: &mut BTreeMap<ClusterId, Mark>,
    ) -> Option<usize> {
        match marks.get(&c) {
            Some(Mark::Done(d)) => return Some(*d),
            Some(Mark::Gray) => return None,
            None => {}
        }
        marks.insert(c, Mark::Gray);
        let mut best = 0;
        for &n in out.get(&c).map(Vec::as_slice).unwrap_or(&[]) {
            best = best.max(depth(n, out, marks)? + 1);
        }
        marks.insert(c, Mark::Done(best));
        Some(best)
    }
    let mut marks = BTreeMap::new();
    let mut longest = 0;
    for &c in out.keys() {
        match depth(c, &out, &mut marks) {
            Some(d) => longest = longest.max(d),
            None => {
                return Err(ProtocolViolation::Other { time: now, detail: format!("waits-for cycle through {c}") });
            }
        }
    }
    Ok(longest)
}

impl Protocol for MultiLeader<'_> {
    type Timer = SchedTimer;

    fn on_inject(&mut self, ctx: &mut Ctx<'_, SchedTimer>, txn: &Transaction) -> Result<(), ProtocolViolation> {
        let c = home_cluster(self.h, txn.home, &txn.shards(), ctx.graph);
        ctx.emit(txn.home, self.h.cluster(c).leader, Payload::TransactionSend { txn: txn.id, cluster: c });
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, SchedTimer>, msg: Message) -> Result<(), ProtocolViolation> {
        let Some(msg) = self.shards.on_destination_message(ctx, msg)? else { return Ok(()) };
        match msg.payload {
            Payload::TransactionSend { txn, cluster } => {
                self.clusters[cluster.0 as usize].core.enqueue(txn);
                self.step(ctx, cluster)
            }
            Payload::AccountStateResponse { tag, values } => {
                self.clusters[tag.cluster.0 as usize].core.on_response(ctx, msg.src, tag, values)
            }
            Payload::FinalCommitResponse { tag, txn } => {
                let c = tag.cluster;
                self.clusters[c.0 as usize].core.on_final_commit(ctx, msg.src, tag, txn, &mut self.shards.status)?;
                self.step(ctx, c)
            }
            Payload::ScheduleControlRequest { from, to, shards } => self.on_control_request(ctx, from, to, shards),
            Payload::ScheduleControlResponse { from, to, shards, grant } => {
                self.on_control_response(ctx, from, to, shards, grant)
            }
            other => Err(ProtocolViolation::Other { time: ctx.now(), detail: format!("leader got {}", other.kind()) }),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, SchedTimer>, timer: SchedTimer) -> Result<(), ProtocolViolation> {
        match timer {
            SchedTimer::Precommit { tag } => {
                let c = tag.cluster;
                self.clusters[c.0 as usize].core.on_precommit(ctx, tag, &mut self.shards.status)?;
                self.step(ctx, c)
            }
            SchedTimer::Append { shard, tag, commits, .. } => self.shards.dests[shard.index()].on_append(ctx, tag, commits),
        }
    }

    fn check(&mut self, now: Time) -> Result<(), ProtocolViolation> {
        self.shards.check(now)?;
        let state = self.control_state();
        check_token_conservation(&state, now)?;
        let depth = check_waits_for_acyclic(self.h, &state.waits_for, now)?;
        self.max_wait_depth = self.max_wait_depth.max(depth);
        self.waits_for_checks += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::build_hierarchy;
    use crate::simkernel::{run, DelayModel, EngineSetup};
    use crate::topology::{build_graph, ShardGraph, TopologySpec};
    use crate::types::{Access, AccountId, Rate, TxnStatus};
    use crate::workload::InjectionTrace;

    fn acct(shard: u32, index: u32) -> AccountId {
        AccountId { shard: ShardId(shard), index }
    }

    type Fired = Vec<(Time, VersionTag, Vec<TxnId>)>;

    fn run_multi(g: &ShardGraph, trace: &InjectionTrace, until: Time) -> (Vec<Option<(Time, TxnStatus)>>, Fired, String) {
        let h = build_hierarchy(g);
        let setup = EngineSetup { graph: g, trace, delay: DelayModel::deterministic(g.diameter() as u64 + 2), record_events: false };
        let mut p = MultiLeader::new(&h, g.shard_count(), trace.txns.len(), 1, true);
        let rec = run(&mut p, &setup, until).unwrap();
        let state = p.control_state();
        check_token_conservation(&state, until).unwrap();
        assert!(state.in_transit.is_empty());
        (rec.done, p.fired.clone(), p.control_trace().unwrap().to_string())
    }

    #[test]
    fn intra_shard_txn_stays_at_singleton() {
        let g = build_graph(&TopologySpec::Clique { shards: 4 }).unwrap();
        let t = Transaction::new(TxnId(0), ShardId(2), 0, vec![Access::deposit(acct(2, 1), 3)]);
        let trace = InjectionTrace { txns: vec![t], rho: Rate::new(1, 8), b: 1, horizon: 60 };
        let (done, fired, control) = run_multi(&g, &trace, 60);
        assert_eq!(done[0].unwrap().1, TxnStatus::Committed);
        assert_eq!(fired[0].1.cluster, ClusterId(2));
        assert!(control.is_empty());
    }

    #[test]
    fn cross_shard_txn_pulls_tokens_from_singletons() {
        let g = build_graph(&TopologySpec::Clique { shards: 4 }).unwrap();
        let t = Transaction::new(TxnId(0), ShardId(0), 0, vec![Access::deposit(acct(0, 0), 1), Access::deposit(acct(1, 0), 1)]);
        let trace = InjectionTrace { txns: vec![t], rho: Rate::new(1, 8), b: 1, horizon: 80 };
        let (done, fired, control) = run_multi(&g, &trace, 80);
        assert_eq!(done[0].unwrap().1, TxnStatus::Committed);
        assert!(fired[0].1.cluster.0 >= 4);
        let kinds: Vec<&str> = control.lines().map(|l| l.split(' ').nth(1).unwrap()).collect();
        assert_eq!(kinds.iter().filter(|&&k| k == "request").count(), 2);
        assert_eq!(kinds.iter().filter(|&&k| k == "grant").count(), 2);
        // tokens return to the bottom once the batch commits
        assert_eq!(kinds.iter().filter(|&&k| k == "release").count(), 2);
    }

    #[test]
    fn distant_segments_commit_concurrently() {
        let g = build_graph(&TopologySpec::Line { shards: 16 }).unwrap();
        let mut txns = Vec::new();
        for i in 0..10u64 {
            for (home, a, b) in [(0, 0, 1), (15, 14, 15)] {
                let id = TxnId(txns.len() as u64);
                txns.push(Transaction::new(id, ShardId(home), i * 12, vec![Access::deposit(acct(a, 0), 1), Access::deposit(acct(b, 0), 1)]));
            }
        }
        let trace = InjectionTrace { txns, rho: Rate::new(1, 8), b: 1, horizon: 400 };
        let (done, fired, _) = run_multi(&g, &trace, 400);
        assert!(done.iter().all(|d| d.is_some_and(|(_, s)| s == TxnStatus::Committed)));
        let span = |f: &(Time, VersionTag, Vec<TxnId>)| {
            (f.0, f.2.iter().map(|t| done[t.0 as usize].unwrap().0).max().unwrap())
        };
        let left: Vec<_> = fired.iter().filter(|f| f.2.iter().all(|t| t.0 % 2 == 0)).map(span).collect();
        let right: Vec<_> = fired.iter().filter(|f| f.2.iter().all(|t| t.0 % 2 == 1)).map(span).collect();
        assert_eq!(left.len() + right.len(), fired.len());
        let overlap = left.iter().any(|l| right.iter().any(|r| l.0 <= r.1 && r.0 <= l.1));
        assert!(overlap, "{left:?} {right:?}");
    }

    #[test]
    fn waits_for_rejects_upward_edges() {
        let g = build_graph(&TopologySpec::Line { shards: 8 }).unwrap();
        let h = build_hierarchy(&g);
        assert_eq!(check_waits_for_acyclic(&h, &[], 0).unwrap(), 0);
        let top = *h.chain(ShardId(0)).last().unwrap();
        let mid = h.chain(ShardId(0))[1];
        let bottom = h.singleton(ShardId(0));
        assert_eq!(check_waits_for_acyclic(&h, &[(top, mid), (mid, bottom)], 0).unwrap(), 2);
        assert!(matches!(
            check_waits_for_acyclic(&h, &[(bottom, top)], 3),
            Err(ProtocolViolation::WaitsForOrder { time: 3, .. })
        ));
    }
}
