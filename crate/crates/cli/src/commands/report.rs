use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use ham_core::FairnessReport;

use crate::run_dir::{read_metrics_without_timing, RunDirectory, METRICS_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
}

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub runs: Vec<PathBuf>,
    pub format: ReportFormat,
    /// Write here instead of returning the table for stdout.
    pub out: Option<PathBuf>,
}

struct Row {
    name: String,
    mode: String,
    report: FairnessReport,
    attack_steps: u64,
}

fn load_row(dir: &Path) -> Result<Row> {
    let config = RunDirectory::load_config(dir)?;
    let path = dir.join("reports/fairness.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: FairnessReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let attack_steps = read_metrics_without_timing(&dir.join(METRICS_FILE))?
        .iter()
        .filter(|r| r["kind"] == "epoch")
        .filter_map(|r| r["attack_steps"].as_u64())
        .sum();
    let mode = serde_json::to_value(config.train.mining.mode)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    Ok(Row {
        name: format!("{} (seed {})", config.run_id, config.train.seed),
        mode,
        report,
        attack_steps,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Comparison table over finished runs, errors in percent.
pub fn report(args: &ReportArgs) -> Result<String> {
    let rows = args.runs.iter().map(|d| load_row(d)).collect::<Result<Vec<_>>>()?;
    let mut s = String::new();
    match args.format {
        ReportFormat::Markdown => {
            s.push_str("| run | mode | avg std | avg bndy | avg rob | worst std | worst bndy | worst rob | rob-acc std-dev | attack steps |\n");
            s.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
            for r in &rows {
                let (a, w) = (&r.report.average, &r.report.worst);
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                    r.name,
                    r.mode,
                    pct(a.standard),
                    pct(a.boundary),
                    pct(a.robust),
                    pct(w.standard),
                    pct(w.boundary),
                    pct(w.robust),
                    pct(r.report.robust_accuracy_std),
                    r.attack_steps
                );
            }
        }
        ReportFormat::Csv => {
            s.push_str("run,mode,avg_standard,avg_boundary,avg_robust,worst_standard,worst_boundary,worst_robust,robust_accuracy_std,attack_steps\n");
            for r in &rows {
                let (a, w) = (&r.report.average, &r.report.worst);
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.name,
                    r.mode,
                    a.standard,
                    a.boundary,
                    a.robust,
                    w.standard,
                    w.boundary,
                    w.robust,
                    r.report.robust_accuracy_std,
                    r.attack_steps
                );
            }
        }
    }
    if let Some(out) = &args.out {
        crate::run_dir::write_file(out, &s)?;
    }
    Ok(s)
}
