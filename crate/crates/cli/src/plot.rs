//! SVG plots: combined-pending trajectories and a latency histogram, each with
//! the run's bound drawn as a reference line.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use num_traits::ToPrimitive;
use plotters::prelude::*;

use shardsched::types::parse_rate;

const UNITS_HEADER: [&str; 3] = ["time", "combined_pending", "messages_in_flight"];
const TXNS_HEADER: [&str; 5] = ["txn_id", "gen", "done", "latency", "status"];
const SIZE: (u32, u32) = (960, 540);
const BINS: u64 = 40;

struct Run {
    stem: String,
    pending: Vec<(u64, u64)>,
    latencies: Vec<u64>,
    queue_bound: Option<f64>,
    latency_bound: Option<f64>,
}

/// `x.units.csv` and `x.txns.csv` share the stem `x`.
fn stem_of(path: &Path) -> Result<(PathBuf, String)> {
    let name = path.file_name().and_then(|n| n.to_str()).ok_or_else(|| anyhow!("{}: bad file name", path.display()))?;
    let stem = name
        .strip_suffix(".units.csv")
        .or_else(|| name.strip_suffix(".txns.csv"))
        .ok_or_else(|| anyhow!("{}: expected a .units.csv or .txns.csv file", path.display()))?;
    Ok((path.parent().unwrap_or(Path::new("")).to_path_buf(), stem.to_string()))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let got = rdr.headers().with_context(|| format!("{}: line 1", path.display()))?.clone();
    if got.is_empty() {
        bail!("{}: empty CSV", path.display());
    }
    if got.iter().ne(header.iter().copied()) {
        bail!("{}: line 1: expected header {}", path.display(), header.join(","));
    }
    let mut rows = Vec::new();
    for r in rdr.records() {
        let r = r.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("{}: line {line}: {e}", path.display())
        })?;
        rows.push(r);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(rows)
}

fn field(path: &Path, r: &csv::StringRecord, i: usize) -> Result<Option<u64>> {
    let line = r.position().map_or(0, |p| p.line());
    match r.get(i) {
        Some("") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("{}: line {line}: field {} is not an integer: {v:?}", path.display(), i + 1)),
        None => bail!("{}: line {line}: missing field {}", path.display(), i + 1),
    }
}

fn bounds(summary: &Path) -> (Option<f64>, Option<f64>) {
    let Ok(text) = std::fs::read_to_string(summary) else { return (None, None) };
    let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) else { return (None, None) };
    let get = |k: &str| v["verdict"][k].as_str().and_then(|s| parse_rate(s).ok()).and_then(|r| r.to_f64());
    (get("queue_bound"), get("latency_bound"))
}

fn load(dir: &Path, stem: &str) -> Result<Run> {
    let units = dir.join(format!("{stem}.units.csv"));
    let txns = dir.join(format!("{stem}.txns.csv"));
    let mut pending = Vec::new();
    if units.exists() {
        for r in read_rows(&units, &UNITS_HEADER)? {
            let t = field(&units, &r, 0)?.ok_or_else(|| anyhow!("{}: empty time", units.display()))?;
            pending.push((t, field(&units, &r, 1)?.unwrap_or(0)));
        }
    }
    let mut latencies = Vec::new();
    if txns.exists() {
        for r in read_rows(&txns, &TXNS_HEADER)? {
            field(&txns, &r, 0)?;
            if let Some(l) = field(&txns, &r, 3)? {
                latencies.push(l);
            }
        }
    }
    let (queue_bound, latency_bound) = bounds(&dir.join(format!("{stem}.summary.json")));
    Ok(Run { stem: stem.to_string(), pending, latencies, queue_bound, latency_bound })
}

fn pending_plot(runs: &[Run], out: &Path) -> Result<()> {
    let x_max = runs.iter().flat_map(|r| r.pending.last()).map(|p| p.0).max().unwrap_or(1).max(1);
    let bound = runs.iter().filter_map(|r| r.queue_bound).fold(0.0, f64::max);
    let y_obs = runs.iter().flat_map(|r| &r.pending).map(|p| p.1).max().unwrap_or(0) as f64;
    let y_max = (bound.max(y_obs) * 1.05).max(1.0);

    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("combined pending", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0u64..x_max, 0f64..y_max)?;
    chart.configure_mesh().x_desc("time").y_desc("transactions").draw()?;
    for (i, r) in runs.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(r.pending.iter().map(|&(t, p)| (t, p as f64)), color))?
            .label(r.stem.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
    }
    let distinct: BTreeSet<u64> = runs.iter().filter_map(|r| r.queue_bound).map(f64::to_bits).collect();
    for b in distinct.into_iter().map(f64::from_bits) {
        chart
            .draw_series(LineSeries::new([(0, b), (x_max, b)], RED.stroke_width(2)))?
            .label(format!("queue bound {b}"))
            .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn latency_plot(runs: &[Run], out: &Path) -> Result<()> {
    let all: Vec<u64> = runs.iter().flat_map(|r| r.latencies.iter().copied()).collect();
    let bound = runs.iter().filter_map(|r| r.latency_bound).fold(0.0, f64::max);
    let obs = all.iter().copied().max().unwrap_or(0);
    let x_max = (bound.max(obs as f64) * 1.05).ceil().max(BINS as f64) as u64;
    let width = x_max.div_ceil(BINS);
    let mut counts = vec![0u64; BINS as usize + 1];
    for &l in &all {
        counts[(l / width) as usize] += 1;
    }
    let y_max = (*counts.iter().max().unwrap_or(&1)).max(1) as f64 * 1.1;

    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("latency ({} finished transactions)", all.len()), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0u64..x_max, 0f64..y_max)?;
    chart.configure_mesh().x_desc("latency").y_desc("count").draw()?;
    chart.draw_series(counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| {
        let x0 = i as u64 * width;
        Rectangle::new([(x0, 0.0), (x0 + width, c as f64)], BLUE.mix(0.6).filled())
    }))?;
    let distinct: BTreeSet<u64> = runs.iter().filter_map(|r| r.latency_bound).map(f64::to_bits).collect();
    for b in distinct.into_iter().map(f64::from_bits) {
        let x = b.round() as u64;
        chart
            .draw_series(LineSeries::new([(x, 0.0), (x, y_max)], RED.stroke_width(2)))?
            .label(format!("latency bound {b}"))
            .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

/// Renders `<name>.pending.svg` and `<name>.latency.svg` into `out`, where
/// `<name>` is the run stem, or `<first stem>_overlay` for several runs.
pub fn render(csvs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut stems: Vec<(PathBuf, String)> = Vec::new();
    for p in csvs {
        // surfaces unreadable or empty inputs before any image is written
        File::open(p).with_context(|| format!("opening {}", p.display()))?;
        if std::fs::metadata(p)?.len() == 0 {
            bail!("{}: empty CSV", p.display());
        }
        let s = stem_of(p)?;
        if !stems.contains(&s) {
            stems.push(s);
        }
    }
    let runs: Vec<Run> = stems.iter().map(|(d, s)| load(d, s)).collect::<Result<_>>()?;
    if runs.iter().all(|r| r.pending.is_empty()) {
        bail!("no pending series found; pass .units.csv files");
    }
    std::fs::create_dir_all(out)?;
    let name = if runs.len() == 1 { runs[0].stem.clone() } else { format!("{}_overlay", runs[0].stem) };
    let pending = out.join(format!("{name}.pending.svg"));
    let latency = out.join(format!("{name}.latency.svg"));
    pending_plot(&runs, &pending)?;
    latency_plot(&runs, &latency)?;
    Ok(vec![pending, latency])
}
