//! Per-unit and per-transaction records, closed-form stability bounds, and
//! the pass/fail check of a run against them.

use std::fmt::Write as _;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::simkernel::RunRecord;
use crate::types::{Rate, Time, TxnId, TxnStatus};
use crate::workload::InjectionTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct UnitRecord {
    pub time: Time,
    pub combined_pending: u64,
    pub messages_in_flight: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TxnRecord {
    pub id: TxnId,
    pub gen: Time,
    pub done: Option<Time>,
    pub status: TxnStatus,
}

impl TxnRecord {
    pub fn latency(&self) -> Option<Time> {
        self.done.map(|d| d - self.gen)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub max_combined_pending: u64,
    pub max_latency: Time,
    pub max_commit_latency: Time,
    pub max_abort_latency: Time,
    pub committed: u64,
    pub aborted: u64,
    pub unfinished: u64,
    /// Committed transactions per time unit.
    pub throughput: f64,
    /// Largest pending count restricted to transactions touching one shard.
    pub max_shard_queue: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub per_unit: Vec<UnitRecord>,
    pub per_txn: Vec<TxnRecord>,
    pub per_shard_max_queue: Vec<u64>,
    pub summary: Summary,
}

impl MetricsLog {
    /// `status` supplies the lifecycle stage of unfinished transactions.
    pub fn from_run(trace: &InjectionTrace, rec: &RunRecord, status: &[TxnStatus]) -> Self {
        let len = rec.until as usize + 2;
        let mut delta = vec![0i64; len];
        let shards = trace.txns.iter().flat_map(|t| t.shards()).map(|s| s.index() + 1).max().unwrap_or(0);
        let mut shard_delta = vec![vec![0i64; len]; shards];
        let mut per_txn = Vec::with_capacity(trace.txns.len());
        let mut summary = Summary::default();

        for (t, done) in trace.txns.iter().zip(&rec.done) {
            if t.gen_time > rec.until {
                continue;
            }
            let end = done.map(|(d, _)| d as usize);
            delta[t.gen_time as usize] += 1;
            if let Some(e) = end {
                delta[e] -= 1;
            }
            for s in t.shards() {
                shard_delta[s.index()][t.gen_time as usize] += 1;
                if let Some(e) = end {
                    shard_delta[s.index()][e] -= 1;
                }
            }
            let record = TxnRecord {
                id: t.id,
                gen: t.gen_time,
                done: done.map(|(d, _)| d),
                status: done.map_or(status[t.id.0 as usize], |(_, s)| s),
            };
            match (record.status, record.latency()) {
                (TxnStatus::Committed, Some(l)) => {
                    summary.committed += 1;
                    summary.max_commit_latency = summary.max_commit_latency.max(l);
                }
                (TxnStatus::Aborted, Some(l)) => {
                    summary.aborted += 1;
                    summary.max_abort_latency = summary.max_abort_latency.max(l);
                }
                _ => summary.unfinished += 1,
            }
            per_txn.push(record);
        }
        summary.max_latency = summary.max_commit_latency.max(summary.max_abort_latency);

        let mut pending = 0i64;
        let per_unit: Vec<UnitRecord> = (0..=rec.until)
            .map(|time| {
                pending += delta[time as usize];
                UnitRecord { time, combined_pending: pending as u64, messages_in_flight: rec.in_flight[time as usize] }
            })
            .collect();
        summary.max_combined_pending = per_unit.iter().map(|u| u.combined_pending).max().unwrap_or(0);
        let per_shard_max_queue: Vec<u64> = shard_delta
            .iter()
            .map(|d| {
                let mut run = 0i64;
                d.iter()
                    .map(|x| {
                        run += x;
                        run as u64
                    })
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        summary.max_shard_queue = per_shard_max_queue.iter().copied().max().unwrap_or(0);
        summary.throughput = summary.committed as f64 / (rec.until + 1) as f64;
        Self { per_unit, per_txn, per_shard_max_queue, summary }
    }

    /// `time,combined_pending,messages_in_flight`
    pub fn units_csv(&self) -> String {
        let mut out = String::from("time,combined_pending,messages_in_flight\n");
        for u in &self.per_unit {
            let _ = writeln!(out, "{},{},{}", u.time, u.combined_pending, u.messages_in_flight);
        }
        out
    }

    /// `txn_id,gen,done,latency,status`; unfinished rows leave `done` and `latency` empty.
    pub fn txns_csv(&self) -> String {
        let mut out = String::from("txn_id,gen,done,latency,status\n");
        for t in &self.per_txn {
            let done = t.done.map(|d| d.to_string()).unwrap_or_default();
            let lat = t.latency().map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", t.id.0, t.gen, done, lat, t.status);
        }
        out
    }
}

fn ceil_sqrt(x: u64) -> u64 {
    let r = x.isqrt();
    if r * r == x {
        r
    } else {
        r + 1
    }
}

fn ceil_log2(x: u64) -> u64 {
    u64::from(crate::cover::ceil_log2(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Single,
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundParams {
    pub s: u64,
    pub k: u64,
    pub b: u64,
    pub frak_d: u64,
    pub rho: Rate,
    pub diameter: u64,
    /// Measured `L * M` from a validated cover.
    pub overhead: Option<u64>,
}

/// Multi-leader forms with a factor `f` standing in for `c1 * log D * log s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaledBounds {
    pub factor: u64,
    pub tau: Rate,
    pub rho_threshold: Rate,
    pub zeta: Rate,
    pub queue_bound: Rate,
    pub latency_bound: Rate,
}

impl ScaledBounds {
    fn new(p: &BoundParams, factor: u64, m: Rate) -> Self {
        let f = Rate::from_integer(factor as i64);
        let int = |x: u64| Rate::from_integer(x as i64);
        let tau = f * (int(16 * p.b) * m + int(48 * p.frak_d));
        let root = int(ceil_sqrt(p.s));
        let rho_threshold = (Rate::new(1, p.k as i64)).max(Rate::new(1, 1) / root) / (int(16) * f);
        let zeta = (int(2 * p.b) + p.rho * int(48) * f * int(p.frak_d)) * int(p.s);
        Self { factor, tau, rho_threshold, zeta, queue_bound: zeta * int(2), latency_bound: tau * int(2) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundSet {
    pub params: BoundParams,
    pub tau: Rate,
    pub rho_prime: Rate,
    pub zeta: Rate,
    pub queue_bound: Rate,
    pub latency_bound: Rate,
    /// With measured `L * M`.
    pub multi: Option<ScaledBounds>,
    /// With `ceil(log2 D) * ceil(log2 s)` and unit constant.
    pub nominal: ScaledBounds,
    pub reference_optimum: Rate,
}

impl BoundSet {
    /// Queue and latency limits enforced for `kind`.
    pub fn active(&self, kind: SchedulerKind) -> (Rate, Rate, Rate) {
        match (kind, self.multi) {
            (SchedulerKind::Multi, Some(m)) => (m.queue_bound, m.latency_bound, m.rho_threshold),
            _ => (self.queue_bound, self.latency_bound, self.rho_prime),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        fn r(x: Rate) -> serde_json::Value {
            json!({ "exact": x.to_string(), "value": x.to_f64().unwrap_or(f64::NAN) })
        }
        fn scaled(m: &ScaledBounds) -> serde_json::Value {
            json!({
                "factor": m.factor,
                "tau": r(m.tau),
                "rho_threshold": r(m.rho_threshold),
                "zeta": r(m.zeta),
                "queue_bound": r(m.queue_bound),
                "latency_bound": r(m.latency_bound),
            })
        }
        json!({
            "s": self.params.s,
            "k": self.params.k,
            "b": self.params.b,
            "frak_d": self.params.frak_d,
            "rho": r(self.params.rho),
            "tau": r(self.tau),
            "rho_prime": r(self.rho_prime),
            "zeta": r(self.zeta),
            "queue_bound": r(self.queue_bound),
            "latency_bound": r(self.latency_bound),
            "multi": self.multi.as_ref().map(scaled),
            "nominal_multi": scaled(&self.nominal),
            "reference_optimum": r(self.reference_optimum),
        })
    }
}

/// Evaluates every closed form exactly. `sqrt(s)` is taken as `ceil(sqrt(s))`.
pub fn compute_bounds(p: &BoundParams) -> BoundSet {
    let int = |x: u64| Rate::from_integer(x as i64);
    let root = ceil_sqrt(p.s);
    let m = int(p.k.min(root));
    let tau = int(16 * p.b) * m + int(48 * p.frak_d);
    let rho_prime = Rate::new(1, 16 * p.k as i64).max(Rate::new(1, 16 * root as i64));
    let zeta = (int(2 * p.b) + p.rho * int(48 * p.frak_d)) * int(p.s);
    let nominal_factor = ceil_log2(p.diameter).max(1) * ceil_log2(p.s).max(1);
    let floor_root_2s = (2 * p.s).isqrt().max(1);
    BoundSet {
        params: *p,
        tau,
        rho_prime,
        zeta,
        queue_bound: zeta * int(2),
        latency_bound: tau * int(2),
        multi: p.overhead.map(|f| ScaledBounds::new(p, f, m)),
        nominal: ScaledBounds::new(p, nominal_factor, m),
        reference_optimum: Rate::new(2, p.k as i64 + 1).max(Rate::new(2, floor_root_2s as i64)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub queue_ok: bool,
    pub latency_ok: bool,
    pub liveness_ok: bool,
    pub max_combined_pending: u64,
    pub max_latency: Time,
    pub queue_bound: String,
    pub latency_bound: String,
    pub queue_margin: f64,
    pub latency_margin: f64,
    /// Unfinished but injected within the final latency-bound window.
    pub unfinished_in_grace: u64,
    /// Unfinished and already older than the latency bound.
    pub unfinished_overdue: u64,
    /// Whether the run's rate is within the stability threshold.
    pub rate_within_threshold: bool,
}

/// Compares a finished run to its bounds. Pass/fail uses exact arithmetic.
pub fn check_run(log: &MetricsLog, bounds: &BoundSet, kind: SchedulerKind, until: Time) -> Verdict {
    let (queue_bound, latency_bound, threshold) = bounds.active(kind);
    let int = |x: u64| Rate::from_integer(x as i64);
    let s = &log.summary;
    let queue_ok = int(s.max_combined_pending) <= queue_bound;
    let latency_ok = int(s.max_latency) <= latency_bound;
    let (mut grace, mut overdue) = (0, 0);
    for t in log.per_txn.iter().filter(|t| t.done.is_none()) {
        if int(until - t.gen) < latency_bound {
            grace += 1;
        } else {
            overdue += 1;
        }
    }
    let ratio = |x: u64, b: Rate| x as f64 / b.to_f64().unwrap_or(f64::INFINITY);
    Verdict {
        passed: queue_ok && latency_ok && overdue == 0,
        queue_ok,
        latency_ok,
        liveness_ok: overdue == 0,
        max_combined_pending: s.max_combined_pending,
        max_latency: s.max_latency,
        queue_bound: queue_bound.to_string(),
        latency_bound: latency_bound.to_string(),
        queue_margin: ratio(s.max_combined_pending, queue_bound),
        latency_margin: ratio(s.max_latency, latency_bound),
        unfinished_in_grace: grace,
        unfinished_overdue: overdue,
        rate_within_threshold: bounds.params.rho <= threshold,
    }
}
