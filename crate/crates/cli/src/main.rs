//! `shardsched` command line: run scenarios, sweep rates, plot results, dump covers.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use shardsched::cover::{build_hierarchy, validate_cover};
use shardsched::error::ScenarioError;
use shardsched::scenario::{aggregate_json, Scenario};
use shardsched::sweep::{self, SeedResult};
use shardsched::topology::build_graph;
use shardsched::types::{parse_rate, Rate};

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 5;

#[derive(Parser)]
#[command(name = "shardsched", version, about = "Sharded transaction scheduling simulator")]
struct Cli {
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true, env = "SHARDSIM_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every seed of a scenario and write per-seed artifacts.
    Run { config: PathBuf },
    /// Run the scenario once per injection rate.
    Sweep {
        config: PathBuf,
        /// Comma-separated rates, e.g. `1/256,1/128,1/64`.
        #[arg(long, value_delimiter = ',', required = true)]
        rho_list: Vec<String>,
    },
    /// Render pending-queue and latency plots from metrics CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Directory for the images; defaults to the first CSV's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the cluster hierarchy and cover report as JSON.
    DumpCover { config: PathBuf },
}

/// An error that carries its exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn scenario_exit(e: ScenarioError) -> anyhow::Error {
    Exit(e.exit_code() as u8, e.to_string()).into()
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::load(path).map_err(scenario_exit)
}

fn out_dir(cli: &Option<PathBuf>, scn: &Scenario) -> Result<PathBuf> {
    let dir = cli.clone().or_else(|| scn.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes artifacts and reports each seed; returns the worst exit code.
fn report(results: &[SeedResult], scn: &Scenario, dir: &Path) -> Result<u8> {
    let mut code = 0;
    for (seed, r) in scn.seeds.iter().zip(results) {
        match r {
            Ok(o) => {
                o.write_artifacts(dir).with_context(|| format!("writing to {}", dir.display()))?;
                let v = &o.verdict;
                println!(
                    "{} seed {seed}: pending {} / {} latency {} / {} unfinished {}+{} audit {}",
                    if o.passed() { "pass" } else { "FAIL" },
                    v.max_combined_pending,
                    v.queue_bound,
                    v.max_latency,
                    v.latency_bound,
                    v.unfinished_in_grace,
                    v.unfinished_overdue,
                    if o.audit.passed() { "ok" } else { "broken" },
                );
                if !o.passed() {
                    code = code.max(EXIT_CHECK);
                }
            }
            Err(e) => {
                eprintln!("error seed {seed}: {e}");
                code = code.max(e.exit_code() as u8);
            }
        }
    }
    Ok(code)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.cmd {
        Cmd::Run { config } => {
            let scn = load(config)?;
            let dir = out_dir(&cli.output_dir, &scn)?;
            let results = sweep::run_all(&scn);
            let code = report(&results, &scn, &dir)?;
            write_json(&dir.join(format!("{}.aggregate.json", scn.name)), &aggregate_json(&scn.name, &results))?;
            Ok(code)
        }
        Cmd::Sweep { config, rho_list } => {
            let scn = load(config)?;
            let dir = out_dir(&cli.output_dir, &scn)?;
            let rates: Vec<Rate> = rho_list
                .iter()
                .map(|r| parse_rate(r.trim()).map_err(|e| Exit(EXIT_CONFIG, format!("--rho-list: {e}")).into()))
                .collect::<Result<_>>()?;
            let runs = sweep::run_rates(&scn, &rates).map_err(scenario_exit)?;
            let mut code = 0;
            let mut rows = Vec::new();
            for (s, results) in &runs {
                println!("rho {}", s.workload.rho);
                code = code.max(report(results, s, &dir)?);
                let agg = aggregate_json(&s.name, results);
                write_json(&dir.join(format!("{}.aggregate.json", s.name)), &agg)?;
                rows.push(json!({ "rho": s.workload.rho.to_string(), "aggregate": agg }));
            }
            write_json(&dir.join(format!("{}.sweep.json", scn.name)), &json!({ "name": scn.name, "rates": rows }))?;
            Ok(code)
        }
        Cmd::Plot { csv, out } => {
            let dir = out.clone().or_else(|| csv[0].parent().map(Path::to_path_buf)).unwrap_or_default();
            for p in plot::render(csv, &dir).map_err(|e| Exit(EXIT_CONFIG, format!("{e:#}")))? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Cmd::DumpCover { config } => {
            let scn = load(config)?;
            let g = build_graph(&scn.topology).map_err(|e| scenario_exit(e.into()))?;
            let h = build_hierarchy(&g);
            let report = validate_cover(&h, &g).map_err(|e| scenario_exit(e.into()))?;
            let (layers, sublayers) = h.structure();
            let v = json!({
                "shards": g.shard_count(),
                "diameter": g.diameter(),
                "layers": layers,
                "max_sublayers": sublayers,
                "report": report,
                "clusters": h.to_json(),
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(EXIT_CONFIG, |x| x.0))
        }
    }
}
