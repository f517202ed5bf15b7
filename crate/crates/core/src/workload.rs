//! Adversarial injection traces.
//!
//! The generator admits a candidate only if every shard it touches has a full
//! token in its leaky bucket (capacity `b`, refill `rho` per unit). The checker
//! is an independent sliding-window count over the emitted trace.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::WorkloadError;
use crate::topology::ShardGraph;
use crate::types::{Access, AccountId, Mode, Rate, ShardId, Time, Transaction, TxnId};

/// Starting balance of every account.
pub const INITIAL_BALANCE: i64 = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Uniform,
    Bursty,
    Hotspot,
    Dos,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::Uniform, Pattern::Bursty, Pattern::Hotspot, Pattern::Dos];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub rho: Rate,
    pub b: u32,
    pub k: u32,
    pub horizon: Time,
    pub pattern: Pattern,
    pub account_space: u32,
    pub write_fraction: f64,
    pub seed: u64,
    /// Probability a shard offers a candidate in a given unit (uniform, hotspot, dos background).
    pub attempt_prob: f64,
    /// Target of the dos pattern.
    pub victim: ShardId,
    /// When set, destinations are drawn within this many hops of the home shard.
    pub max_hops: Option<u32>,
}

impl WorkloadParams {
    pub fn new(rho: Rate, b: u32, k: u32, horizon: Time, pattern: Pattern, seed: u64) -> Self {
        Self {
            rho,
            b,
            k,
            horizon,
            pattern,
            account_space: 64,
            write_fraction: 0.5,
            seed,
            attempt_prob: 0.5,
            victim: ShardId(0),
            max_hops: None,
        }
    }

    fn validate(&self, s: u32) -> Result<(), WorkloadError> {
        if self.rho < Rate::zero() || self.rho > Rate::one() {
            return Err(WorkloadError::Rate(self.rho.to_string()));
        }
        if self.b < 1 {
            return Err(WorkloadError::Burstiness);
        }
        if self.k < 1 || self.k > s {
            return Err(WorkloadError::ShardsPerTxn { k: self.k, s });
        }
        if self.account_space < 1 {
            return Err(WorkloadError::AccountSpace);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionTrace {
    pub txns: Vec<Transaction>,
    pub rho: Rate,
    pub b: u32,
    pub horizon: Time,
}

impl InjectionTrace {
    pub fn empty(rho: Rate, b: u32, horizon: Time) -> Self {
        Self { txns: Vec::new(), rho, b, horizon }
    }

    pub fn get(&self, id: TxnId) -> &Transaction {
        &self.txns[id.0 as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Admissibility {
    Ok,
    Violation { shard: ShardId, start: Time, end: Time, count: u64 },
}

impl Admissibility {
    pub fn is_ok(&self) -> bool {
        matches!(self, Admissibility::Ok)
    }
}

struct Buckets {
    level: Vec<Rate>,
    cap: Rate,
    rho: Rate,
}

impl Buckets {
    fn new(s: u32, b: u32, rho: Rate) -> Self {
        let cap = Rate::from_integer(i64::from(b));
        Self { level: vec![cap; s as usize], cap, rho }
    }

    fn tick(&mut self) {
        for l in &mut self.level {
            *l = (*l + self.rho).min(self.cap);
        }
    }

    fn admits(&self, shards: &BTreeSet<ShardId>) -> bool {
        shards.iter().all(|s| self.level[s.index()] >= Rate::one())
    }

    fn take(&mut self, shards: &BTreeSet<ShardId>) {
        for s in shards {
            self.level[s.index()] -= Rate::one();
        }
    }
}

struct Gen<'a> {
    g: &'a ShardGraph,
    p: &'a WorkloadParams,
    rng: ChaCha8Rng,
    buckets: Buckets,
    out: Vec<Transaction>,
}

impl Gen<'_> {
    fn access(&mut self, shard: ShardId) -> Access {
        let account = AccountId { shard, index: self.rng.gen_range(0..self.p.account_space) };
        if self.rng.gen_bool(self.p.write_fraction) {
            let amount = self.rng.gen_range(1..=50);
            if self.rng.gen_bool(0.5) {
                Access::withdraw(account, amount)
            } else {
                Access::deposit(account, amount)
            }
        } else if self.rng.gen_bool(0.5) {
            Access::read_at_least(account, self.rng.gen_range(0..=200))
        } else {
            Access::read(account)
        }
    }

    /// `anchor` plus up to k-1 further shards drawn from `pool`.
    fn shard_set(&mut self, anchor: ShardId, pool: &[ShardId]) -> BTreeSet<ShardId> {
        let m = self.rng.gen_range(1..=self.p.k) as usize;
        let mut set = BTreeSet::from([anchor]);
        let mut candidates: Vec<ShardId> = pool
            .iter()
            .copied()
            .filter(|&s| s != anchor)
            .filter(|&s| self.p.max_hops.is_none_or(|h| self.g.dist(anchor, s) <= h))
            .collect();
        candidates.shuffle(&mut self.rng);
        set.extend(candidates.into_iter().take(m - 1));
        set
    }

    fn offer(&mut self, t: Time, home: ShardId, shards: BTreeSet<ShardId>) -> bool {
        if !self.buckets.admits(&shards) {
            return false;
        }
        self.buckets.take(&shards);
        let accesses = shards.iter().map(|&s| self.access(s)).collect();
        let id = TxnId(self.out.len() as u64);
        self.out.push(Transaction::new(id, home, t, accesses));
        true
    }

    fn all_shards(&self) -> Vec<ShardId> {
        self.g.shards().collect()
    }

    fn uniform_round(&mut self, t: Time, exclude: Option<ShardId>) {
        let pool: Vec<ShardId> = self.all_shards().into_iter().filter(|&s| Some(s) != exclude).collect();
        for &home in &pool {
            if self.rng.gen_bool(self.p.attempt_prob) {
                let shards = self.shard_set(home, &pool);
                self.offer(t, home, shards);
            }
        }
    }

    fn hotspot_round(&mut self, t: Time) {
        let all = self.all_shards();
        let hot_n = (all.len() / 8).max(1);
        let hot: Vec<ShardId> = all[..hot_n].to_vec();
        for &home in &all {
            if self.rng.gen_bool(self.p.attempt_prob) {
                let pool = if self.rng.gen_bool(0.8) { &hot } else { &all };
                let mut shards = self.shard_set(home, pool);
                if self.rng.gen_bool(0.8) {
                    // lean on a hot shard even when home is cold
                    let h = *hot.choose(&mut self.rng).unwrap();
                    if shards.len() >= self.p.k as usize {
                        let drop = *shards.iter().rev().find(|&&s| s != home).unwrap_or(&home);
                        if drop != home {
                            shards.remove(&drop);
                        }
                    }
                    if shards.len() < self.p.k as usize {
                        shards.insert(h);
                    }
                }
                self.offer(t, home, shards);
            }
        }
    }

    fn burst(&mut self, t: Time) {
        let mut shards = self.all_shards();
        shards.shuffle(&mut self.rng);
        let mut rest = &shards[..];
        while !rest.is_empty() {
            let size = self.rng.gen_range(1..=self.p.k as usize).min(rest.len());
            let (group, tail) = rest.split_at(size);
            rest = tail;
            let set: BTreeSet<ShardId> = group.iter().copied().collect();
            for _ in 0..self.p.b {
                let home = *group.choose(&mut self.rng).unwrap();
                self.offer(t, home, set.clone());
            }
        }
    }

    fn dos_round(&mut self, t: Time) {
        let victim = self.p.victim;
        let all = self.all_shards();
        while self.buckets.level[victim.index()] >= Rate::one() {
            let mut placed = false;
            for _ in 0..4 {
                let set = self.shard_set(victim, &all);
                let home = *set.iter().collect::<Vec<_>>().choose(&mut self.rng).copied().unwrap();
                if self.offer(t, home, set) {
                    placed = true;
                    break;
                }
            }
            if !placed && !self.offer(t, victim, BTreeSet::from([victim])) {
                break;
            }
        }
        self.uniform_round(t, Some(victim));
    }
}

/// Generates a trace that satisfies the `(rho, b)` constraint by construction.
pub fn generate_trace(g: &ShardGraph, params: &WorkloadParams) -> Result<InjectionTrace, WorkloadError> {
    params.validate(g.shard_count())?;
    let mut gen = Gen {
        g,
        p: params,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        buckets: Buckets::new(g.shard_count(), params.b, params.rho),
        out: Vec::new(),
    };
    let period = if params.rho.is_zero() {
        None
    } else {
        Some((Rate::from_integer(i64::from(params.b)) / params.rho).ceil().to_integer() as Time)
    };
    for t in 0..=params.horizon {
        if t > 0 {
            gen.buckets.tick();
        }
        match params.pattern {
            Pattern::Uniform => gen.uniform_round(t, None),
            Pattern::Hotspot => gen.hotspot_round(t),
            Pattern::Dos => gen.dos_round(t),
            Pattern::Bursty => {
                let due = match period {
                    Some(p) => t % p.max(1) == 0,
                    None => t == 0,
                };
                if due {
                    gen.burst(t);
                }
            }
        }
    }
    Ok(InjectionTrace { txns: gen.out, rho: params.rho, b: params.b, horizon: params.horizon })
}

/// Per-shard arrival counts indexed by time unit.
fn shard_counts(trace: &InjectionTrace, s: usize, len: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; len]; s];
    for t in &trace.txns {
        for sh in t.shards() {
            counts[sh.index()][t.gen_time as usize] += 1;
        }
    }
    counts
}

/// Checks every closed window `[t1, t2]`, `t1 < t2`, on every shard:
/// arrivals touching the shard must not exceed `rho * (t2 - t1) + b`.
///
/// Reports the lexicographically smallest `(shard, t1, t2)` violation.
pub fn check_admissibility(trace: &InjectionTrace, rho: Rate, b: u32) -> Admissibility {
    let s = trace.txns.iter().flat_map(|t| t.shards()).map(|x| x.index() + 1).max().unwrap_or(0);
    let last = trace.txns.iter().map(|t| t.gen_time).max().unwrap_or(0).max(trace.horizon);
    let len = last as usize + 1;
    let counts = shard_counts(trace, s, len);
    let b = Rate::from_integer(i64::from(b));

    for (shard, c) in counts.iter().enumerate() {
        // cumulative[t] = arrivals in [0, t)
        let mut cumulative = vec![0i64; len + 1];
        for t in 0..len {
            cumulative[t + 1] = cumulative[t] + c[t] as i64;
        }
        let window = |t1: usize, t2: usize| cumulative[t2 + 1] - cumulative[t1];
        // A window [t1,t2] violates iff (cum[t2+1] - rho*t2) - (cum[t1] - rho*t1) > b.
        // Sweep t2 keeping the minimum of the t1 term over t1 < t2.
        let mut best: Option<Rate> = None;
        let mut violated = false;
        for t2 in 1..len {
            let t1 = t2 - 1;
            let term = Rate::from_integer(cumulative[t1]) - rho * Rate::from_integer(t1 as i64);
            best = Some(best.map_or(term, |m: Rate| m.min(term)));
            let head = Rate::from_integer(cumulative[t2 + 1]) - rho * Rate::from_integer(t2 as i64);
            if head - best.unwrap() > b {
                violated = true;
                break;
            }
        }
        if !violated {
            continue;
        }
        for t1 in 0..len {
            for t2 in t1 + 1..len {
                let count = window(t1, t2);
                if Rate::from_integer(count) > rho * Rate::from_integer((t2 - t1) as i64) + b {
                    return Admissibility::Violation {
                        shard: ShardId(shard as u32),
                        start: t1 as Time,
                        end: t2 as Time,
                        count: count as u64,
                    };
                }
            }
        }
        unreachable!("sweep found a violation the scan did not");
    }
    Admissibility::Ok
}

pub fn format_access(a: &Access) -> String {
    let mut s = format!("{}:{}:", a.account.shard.0, a.account.index);
    match a.mode {
        Mode::Read => s.push('r'),
        Mode::Write => {
            let _ = write!(s, "w{:+}", a.delta);
        }
    }
    if let Some(m) = a.min {
        let _ = write!(s, ">={m}");
    }
    s
}

/// Line format: `id gen_time home shard:account:mode[,...]`, where mode is
/// `r`, `r>=N`, `w+D`, `w-D` or `w-D>=N`. A `#trace` header carries rho, b, horizon.
pub fn write_trace(trace: &InjectionTrace) -> String {
    let mut out = format!("#trace rho={} b={} horizon={}\n", trace.rho, trace.b, trace.horizon);
    for t in &trace.txns {
        let ops: Vec<String> = t.accesses.iter().map(format_access).collect();
        let _ = writeln!(out, "{} {} {} {}", t.id.0, t.gen_time, t.home.0, ops.join(","));
    }
    out
}

fn parse_access(tok: &str, line: usize) -> Result<Access, WorkloadError> {
    let err = |reason: &str| WorkloadError::Parse { line, reason: format!("{reason}: {tok:?}") };
    let mut parts = tok.splitn(3, ':');
    let shard: u32 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(|| err("bad shard"))?;
    let index: u32 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(|| err("bad account"))?;
    let mode = parts.next().ok_or_else(|| err("missing mode"))?;
    let (body, min) = match mode.split_once(">=") {
        Some((b, m)) => (b, Some(m.parse::<i64>().map_err(|_| err("bad guard"))?)),
        None => (mode, None),
    };
    let account = AccountId { shard: ShardId(shard), index };
    match body.as_bytes().first() {
        Some(b'r') if body.len() == 1 => Ok(Access { account, mode: Mode::Read, min, delta: 0 }),
        Some(b'w') => {
            let delta: i64 = body[1..].parse().map_err(|_| err("bad delta"))?;
            Ok(Access::write(account, delta, min))
        }
        _ => Err(err("bad mode")),
    }
}

pub fn read_trace(text: &str) -> Result<InjectionTrace, WorkloadError> {
    let mut rho = Rate::zero();
    let mut b = 1;
    let mut horizon = 0;
    let mut txns = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(h) = l.strip_prefix("#trace") {
            for kv in h.split_whitespace() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| WorkloadError::Parse { line, reason: format!("bad header field {kv:?}") })?;
                let bad = || WorkloadError::Parse { line, reason: format!("bad value for {k}") };
                match k {
                    "rho" => rho = crate::types::parse_rate(v).map_err(|_| bad())?,
                    "b" => b = v.parse().map_err(|_| bad())?,
                    "horizon" => horizon = v.parse().map_err(|_| bad())?,
                    _ => {}
                }
            }
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(WorkloadError::Parse { line, reason: format!("expected 4 fields, got {}", f.len()) });
        }
        let num = |x: &str, what: &str| {
            x.parse::<u64>().map_err(|_| WorkloadError::Parse { line, reason: format!("bad {what}: {x:?}") })
        };
        let id = num(f[0], "id")?;
        let gen_time = num(f[1], "gen_time")?;
        let home = num(f[2], "home")? as u32;
        let accesses = f[3].split(',').map(|tok| parse_access(tok, line)).collect::<Result<Vec<_>, _>>()?;
        if id != txns.len() as u64 {
            return Err(WorkloadError::Parse { line, reason: format!("ids must be dense, expected {}", txns.len()) });
        }
        txns.push(Transaction::new(TxnId(id), ShardId(home), gen_time, accesses));
    }
    if txns.windows(2).any(|w| w[0].gen_time > w[1].gen_time) {
        return Err(WorkloadError::Parse { line: 0, reason: "transactions out of time order".into() });
    }
    Ok(InjectionTrace { txns, rho, b, horizon })
}
