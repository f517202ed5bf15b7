//! Scenario configuration and the per-seed run pipeline:
//! graph, cover, trace, engine, bounds, audit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer};
use serde_json::json;

use crate::audit::{audit, AuditReport};
use crate::cover::{build_hierarchy, validate_cover, CoverReport};
use crate::error::ScenarioError;
use crate::metrics::{check_run, compute_bounds, BoundParams, BoundSet, MetricsLog, SchedulerKind, Verdict};
use crate::sched_multi::MultiLeader;
use crate::sched_single::{DestinationState, SingleLeader};
use crate::simkernel::{run, DelayMode, DelayModel, EngineSetup};
use crate::topology::{build_graph, TopologySpec};
use crate::types::{parse_rate, Rate, ShardId, Time};
use crate::workload::{check_admissibility, generate_trace, read_trace, Admissibility, InjectionTrace, Pattern, WorkloadParams};

fn rate<'de, D: Deserializer<'de>>(d: D) -> Result<Rate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Int(i64),
    }
    match Raw::deserialize(d)? {
        Raw::Text(s) => parse_rate(&s).map_err(serde::de::Error::custom),
        Raw::Int(i) => Ok(Rate::from_integer(i)),
    }
}

fn default_name() -> String {
    "scenario".into()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_weight() -> u64 {
    1
}
fn default_accounts() -> u32 {
    64
}
fn default_write_fraction() -> f64 {
    0.5
}
fn default_attempt_prob() -> f64 {
    0.5
}
fn default_per_hop() -> Time {
    1
}
fn default_mode() -> DelayMode {
    DelayMode::Deterministic
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(deserialize_with = "rate")]
    pub rho: Rate,
    pub b: u32,
    pub k: u32,
    pub pattern: Pattern,
    #[serde(default = "default_accounts")]
    pub accounts: u32,
    #[serde(default = "default_write_fraction")]
    pub write_fraction: f64,
    #[serde(default = "default_attempt_prob")]
    pub attempt_prob: f64,
    #[serde(default)]
    pub victim: u32,
    #[serde(default)]
    pub max_hops: Option<u32>,
    /// Replay a trace file instead of generating one.
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub frak_d: Time,
    #[serde(default = "default_mode")]
    pub mode: DelayMode,
    #[serde(default)]
    pub gst: Time,
    #[serde(default = "default_per_hop")]
    pub per_hop: Time,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub scheduler: SchedulerKind,
    /// Leader shard for the single-leader scheduler.
    #[serde(default)]
    pub leader: u32,
    pub horizon: Time,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Decrement applied to the last schedule length per resolved transaction.
    #[serde(default = "default_weight")]
    pub weight: u64,
    /// Keep message and control traces in the outcome.
    #[serde(default)]
    pub record_events: bool,
    /// Skip the admissibility check (negative controls only).
    #[serde(default)]
    pub bypass_admissibility: bool,
    pub topology: TopologySpec,
    pub workload: WorkloadConfig,
    pub delay: DelayConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_toml(&text)?;
        // trace paths are relative to the config file
        if let (Some(t), Some(dir)) = (s.workload.trace.as_mut(), path.parent()) {
            if t.is_relative() {
                *t = dir.join(&*t);
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        let w = &self.workload;
        if w.rho <= Rate::from_integer(0) || w.rho > Rate::from_integer(1) {
            return bad(format!("rho must satisfy 0 < rho <= 1, got {}", w.rho));
        }
        if w.b < 1 {
            return bad("b must be at least 1".into());
        }
        let s = self.topology.shard_count();
        if w.k < 1 || w.k > s {
            return bad(format!("k must satisfy 1 <= k <= {s}, got {}", w.k));
        }
        if !(0.0..=1.0).contains(&w.write_fraction) || !(0.0..=1.0).contains(&w.attempt_prob) {
            return bad("write_fraction and attempt_prob must lie in [0, 1]".into());
        }
        if self.delay.frak_d < 2 {
            return bad(format!("frak_d must be at least 2, got {}", self.delay.frak_d));
        }
        if self.leader >= s || w.victim >= s {
            return bad("leader and victim must name existing shards".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        Ok(())
    }

    pub fn with_rho(&self, rho: Rate) -> Self {
        let mut s = self.clone();
        s.workload.rho = rho;
        s.name = format!("{}_rho{}-{}", self.name, rho.numer(), rho.denom());
        s
    }

    fn workload_params(&self, seed: u64) -> WorkloadParams {
        let w = &self.workload;
        WorkloadParams {
            rho: w.rho,
            b: w.b,
            k: w.k,
            horizon: self.horizon,
            pattern: w.pattern,
            account_space: w.accounts,
            write_fraction: w.write_fraction,
            seed,
            attempt_prob: w.attempt_prob,
            victim: ShardId(w.victim),
            max_hops: w.max_hops,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub name: String,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    pub log: MetricsLog,
    pub bounds: BoundSet,
    pub verdict: Verdict,
    pub audit: AuditReport,
    pub cover: Option<CoverReport>,
    pub messages_emitted: u64,
    pub undelivered: u64,
    pub max_wait_depth: usize,
    pub waits_for_checks: u64,
    pub event_trace: Option<String>,
    pub control_trace: Option<String>,
    pub ledgers: Vec<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.verdict.passed && self.audit.passed()
    }

    pub fn stem(&self) -> String {
        format!("{}_seed{}", self.name, self.seed)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        json!({
            "name": self.name,
            "seed": self.seed,
            "scheduler": self.scheduler,
            "passed": self.passed(),
            "bounds": self.bounds.to_json(),
            "verdict": self.verdict,
            "audit": self.audit,
            "summary": self.log.summary,
            "per_shard_max_queue": self.log.per_shard_max_queue,
            "messages_emitted": self.messages_emitted,
            "undelivered": self.undelivered,
            "max_wait_depth": self.max_wait_depth,
            "waits_for_checks": self.waits_for_checks,
            "cover": self.cover.as_ref().map(|c| json!({
                "layers": c.constants.layers,
                "max_sublayers": c.constants.max_sublayers,
                "overhead": c.constants.overhead(),
                "c_diam": c.constants.c_diam.to_string(),
                "c_overlap": c.constants.c_overlap.to_string(),
                "layer_max_diameter": c.layer_max_diameter,
                "layer_max_membership": c.layer_max_membership,
            })),
        })
    }

    /// Writes `<stem>.units.csv`, `<stem>.txns.csv`, `<stem>.summary.json`
    /// and any recorded traces; returns the paths written.
    pub fn write_artifacts(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let stem = self.stem();
        let mut files = vec![
            (format!("{stem}.units.csv"), self.log.units_csv()),
            (format!("{stem}.txns.csv"), self.log.txns_csv()),
            (format!("{stem}.summary.json"), serde_json::to_string_pretty(&self.summary_json()).unwrap() + "\n"),
        ];
        if let Some(e) = &self.event_trace {
            files.push((format!("{stem}.events.txt"), e.clone()));
        }
        if let Some(c) = &self.control_trace {
            files.push((format!("{stem}.control.txt"), c.clone()));
        }
        if self.event_trace.is_some() {
            let ledgers: String = self
                .ledgers
                .iter()
                .enumerate()
                .map(|(i, l)| format!("# shard {i}\n{l}"))
                .collect();
            files.push((format!("{stem}.ledger.txt"), ledgers));
        }
        let mut paths = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

/// Runs one seed of `scn` end to end.
pub fn run_seed(scn: &Scenario, seed: u64) -> Result<RunOutcome, ScenarioError> {
    scn.validate()?;
    let g = build_graph(&scn.topology)?;
    let hierarchy = match scn.scheduler {
        SchedulerKind::Multi => Some(build_hierarchy(&g)),
        SchedulerKind::Single => None,
    };
    let cover = hierarchy.as_ref().map(|h| validate_cover(h, &g)).transpose()?;

    let trace: InjectionTrace = match &scn.workload.trace {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
            read_trace(&text)?
        }
        None => generate_trace(&g, &scn.workload_params(seed))?,
    };
    if !scn.bypass_admissibility {
        if let Admissibility::Violation { shard, start, end, count } =
            check_admissibility(&trace, scn.workload.rho, scn.workload.b)
        {
            return Err(ScenarioError::Admissibility(format!(
                "{shard} receives {count} transactions in [{start}, {end}]"
            )));
        }
    }

    let delay = DelayModel { mode: scn.delay.mode, frak_d: scn.delay.frak_d, gst: scn.delay.gst, per_hop: scn.delay.per_hop, seed };
    let setup = EngineSetup { graph: &g, trace: &trace, delay, record_events: scn.record_events };
    let s = g.shard_count();
    let n = trace.txns.len();

    struct Finished {
        rec: crate::simkernel::RunRecord,
        dests: Vec<DestinationState>,
        status: Vec<crate::types::TxnStatus>,
        control: Option<String>,
        depth: usize,
        checks: u64,
    }
    let fin = match &hierarchy {
        None => {
            let mut p = SingleLeader::new(s, n, ShardId(scn.leader), scn.weight);
            let rec = run(&mut p, &setup, scn.horizon)?;
            Finished { rec, dests: p.shards.dests, status: p.shards.status, control: None, depth: 0, checks: 0 }
        }
        Some(h) => {
            let mut p = MultiLeader::new(h, s, n, scn.weight, scn.record_events);
            let rec = run(&mut p, &setup, scn.horizon)?;
            let control = p.control_trace().map(str::to_string);
            Finished {
                rec,
                dests: p.shards.dests,
                status: p.shards.status,
                control,
                depth: p.max_wait_depth,
                checks: p.waits_for_checks,
            }
        }
    };

    let log = MetricsLog::from_run(&trace, &fin.rec, &fin.status);
    let bounds = compute_bounds(&BoundParams {
        s: u64::from(s),
        k: u64::from(scn.workload.k),
        b: u64::from(scn.workload.b),
        frak_d: scn.delay.frak_d,
        rho: scn.workload.rho,
        diameter: u64::from(g.diameter()),
        overhead: cover.as_ref().map(|c| c.constants.overhead()),
    });
    let verdict = check_run(&log, &bounds, scn.scheduler, scn.horizon);
    let report = audit(&trace, &fin.dests, &fin.rec.done, scn.horizon);
    Ok(RunOutcome {
        name: scn.name.clone(),
        seed,
        scheduler: scn.scheduler,
        log,
        bounds,
        verdict,
        audit: report,
        cover,
        messages_emitted: fin.rec.messages_emitted,
        undelivered: fin.rec.undelivered,
        max_wait_depth: fin.depth,
        waits_for_checks: fin.checks,
        event_trace: fin.rec.event_trace,
        control_trace: fin.control,
        ledgers: if scn.record_events { fin.dests.iter().map(DestinationState::dump_ledger).collect() } else { Vec::new() },
    })
}

/// Aggregate record across seeds for a sweep.
pub fn aggregate_json(name: &str, outcomes: &[Result<RunOutcome, ScenarioError>]) -> serde_json::Value {
    let runs: Vec<serde_json::Value> = outcomes
        .iter()
        .map(|o| match o {
            Ok(o) => json!({
                "seed": o.seed,
                "passed": o.passed(),
                "rho": o.bounds.params.rho.to_string(),
                "max_combined_pending": o.verdict.max_combined_pending,
                "max_latency": o.verdict.max_latency,
                "queue_margin": o.verdict.queue_margin,
                "latency_margin": o.verdict.latency_margin,
            }),
            Err(e) => json!({ "error": e.to_string(), "exit_code": e.exit_code() }),
        })
        .collect();
    json!({
        "name": name,
        "runs": runs,
        "passed": outcomes.iter().all(|o| o.as_ref().is_ok_and(RunOutcome::passed)),
    })
}
