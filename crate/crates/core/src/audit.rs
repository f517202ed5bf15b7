//! End-of-run safety audit over every destination ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::conflict::conflicts;
use crate::sched_single::DestinationState;
use crate::simkernel::VersionTag;
use crate::types::{ShardId, Time, TxnId, TxnStatus};
use crate::workload::InjectionTrace;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub serializable: bool,
    pub atomic: bool,
    pub colors_ok: bool,
    pub occupancy_ok: bool,
    pub conflicting_pairs: u64,
    /// First few problems, human readable.
    pub problems: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.serializable && self.atomic && self.colors_ok && self.occupancy_ok
    }
}

const MAX_PROBLEMS: usize = 20;

/// Checks serializability, atomicity, color discipline and occupancy.
pub fn audit(
    trace: &InjectionTrace,
    dests: &[DestinationState],
    done: &[Option<(Time, TxnStatus)>],
    now: Time,
) -> AuditReport {
    let mut r = AuditReport { serializable: true, atomic: true, colors_ok: true, occupancy_ok: true, ..Default::default() };
    let note = |r: &mut AuditReport, msg: String| {
        if r.problems.len() < MAX_PROBLEMS {
            r.problems.push(msg);
        }
    };

    // txn -> shard -> position in that shard's ledger
    let mut pos: HashMap<TxnId, BTreeMap<ShardId, usize>> = HashMap::new();
    let mut colors: BTreeMap<VersionTag, BTreeMap<TxnId, u32>> = BTreeMap::new();
    let mut order: Vec<Vec<TxnId>> = Vec::with_capacity(dests.len());
    for d in dests {
        let mut seq = Vec::new();
        for e in d.ledger() {
            if e.subtxns.windows(2).any(|w| w[0].color > w[1].color) {
                r.colors_ok = false;
                note(&mut r, format!("{} batch {} not in color order", d.shard, e.version));
            }
            for sub in &e.subtxns {
                let at = pos.entry(sub.parent).or_default();
                if at.insert(d.shard, seq.len()).is_some() {
                    r.atomic = false;
                    note(&mut r, format!("{} appears twice on {}", sub.parent, d.shard));
                }
                let c = colors.entry(e.version).or_default();
                if *c.entry(sub.parent).or_insert(sub.color) != sub.color {
                    r.colors_ok = false;
                    note(&mut r, format!("{} has two colors in {}", sub.parent, e.version));
                }
                seq.push(sub.parent);
            }
        }
        order.push(seq);
        if d.check_occupancy(now).is_err() {
            r.occupancy_ok = false;
            note(&mut r, format!("{} occupancy unbalanced", d.shard));
        }
    }

    for t in &trace.txns {
        let on: BTreeSet<ShardId> = pos.get(&t.id).map(|m| m.keys().copied().collect()).unwrap_or_default();
        let ok = match done.get(t.id.0 as usize).copied().flatten().map(|(_, s)| s) {
            Some(TxnStatus::Committed) => on == t.shards(),
            Some(TxnStatus::Aborted) => on.is_empty(),
            _ => on.is_subset(&t.shards()),
        };
        if !ok {
            r.atomic = false;
            note(&mut r, format!("{} ledger presence {:?} disagrees with its outcome", t.id, on));
        }
    }

    for batch in colors.values() {
        let ids: Vec<(&TxnId, &u32)> = batch.iter().collect();
        for (i, (a, ca)) in ids.iter().enumerate() {
            for (b, cb) in &ids[i + 1..] {
                if ca == cb && conflicts(trace.get(**a), trace.get(**b)) {
                    r.colors_ok = false;
                    note(&mut r, format!("conflicting {a} and {b} share color {ca}"));
                }
            }
        }
    }

    let committed = |id: TxnId| matches!(done.get(id.0 as usize), Some(Some((_, TxnStatus::Committed))));
    let mut seen: BTreeSet<(TxnId, TxnId)> = BTreeSet::new();
    for seq in &order {
        for (i, &a) in seq.iter().enumerate() {
            if !committed(a) {
                continue;
            }
            for &b in &seq[i + 1..] {
                if !committed(b) || !seen.insert((a.min(b), a.max(b))) {
                    continue;
                }
                if !conflicts(trace.get(a), trace.get(b)) {
                    continue;
                }
                r.conflicting_pairs += 1;
                let (pa, pb) = (&pos[&a], &pos[&b]);
                let mut dirs = pa.iter().filter_map(|(s, &ia)| pb.get(s).map(|&ib| ia < ib));
                let first = dirs.next();
                if dirs.any(|d| Some(d) != first) {
                    r.serializable = false;
                    note(&mut r, format!("{a} and {b} ordered differently across shards"));
                }
            }
        }
    }
    r
}
