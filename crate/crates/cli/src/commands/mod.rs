//! Subcommand implementations.

pub mod ablate;
mod diagnose;
mod evaluate;
mod plot;
mod report;
mod train;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ham_core::data::{self, Splits};
use ham_core::metrics::{FairnessReport, OverconfidenceReport, PerExampleOutcome, StepHistogram};
use ham_core::model::{load_checkpoint, Checkpoint};
use ham_core::Dataset;

pub use ablate::{run_ablation, AblateArgs, SweepParameter, SweepSpec};
pub use diagnose::{diagnose, DiagnoseArgs, Split};
pub use evaluate::{evaluate, EvaluateArgs};
pub use plot::{plot, PlotArgs};
pub use report::{report, ReportArgs, ReportFormat};
pub use train::{execute_run, train, RunSummary, TrainArgs};

use crate::config::ExperimentConfig;
use crate::presets;
use crate::run_dir::{write_file, RunDirectory, CONFIG_FILE};

/// Environment variable overriding the dataset root (default `./data`).
pub const DATA_ROOT_VAR: &str = "HAM_DATA_ROOT";

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_VAR).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Config from `--config` or `--preset`; exactly one must be given.
pub fn resolve_config(config: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig> {
    match (config, preset) {
        (Some(path), None) => Ok(ExperimentConfig::load(path)?),
        (None, Some(name)) => Ok(presets::preset(name)?),
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (None, None) => bail!("one of --config or --preset is required"),
    }
}

pub fn load_splits(config: &ExperimentConfig) -> Result<Splits> {
    let root = data_root();
    data::load(&config.dataset, &root, config.train.seed)
        .with_context(|| format!("loading {:?} from {}", config.dataset.kind, root.display()))
}

/// Checkpoint plus the config of the run it belongs to, unless one is given.
fn checkpoint_and_config(
    checkpoint: &Path,
    config: Option<&Path>,
    preset: Option<&str>,
) -> Result<(Checkpoint<f32>, ExperimentConfig, Option<PathBuf>)> {
    let ckpt = load_checkpoint::<f32>(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    // checkpoints live in <run>/checkpoints/
    let run = checkpoint
        .parent()
        .and_then(Path::parent)
        .filter(|r| r.join(CONFIG_FILE).is_file())
        .map(Path::to_path_buf);
    let config = match (config, preset, &run) {
        (None, None, Some(run)) => RunDirectory::load_config(run)?,
        (None, None, None) => bail!(
            "{} is not inside a run directory; pass --config or --preset",
            checkpoint.display()
        ),
        (c, p, _) => resolve_config(c, p)?,
    };
    if ckpt.model.architecture() != &config.model {
        bail!(
            "checkpoint architecture {:?} does not match config model {:?}",
            ckpt.model.architecture(),
            config.model
        );
    }
    Ok((ckpt, config, run))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Six-column table as printed to the terminal.
pub fn format_fairness(report: &FairnessReport) -> String {
    let a = &report.average;
    let w = &report.worst;
    format!(
        "           Std.    Bndy.   Rob.\n  Avg.   {:>6}  {:>6}  {:>6}\n  Worst  {:>6}  {:>6}  {:>6}\n  robust-accuracy std-dev {}",
        pct(a.standard),
        pct(a.boundary),
        pct(a.robust),
        pct(w.standard),
        pct(w.boundary),
        pct(w.robust),
        pct(report.robust_accuracy_std)
    )
}

pub fn write_fairness(dir: &Path, report: &FairnessReport) -> Result<()> {
    write_file(&dir.join("fairness.json"), serde_json::to_string_pretty(report)? + "\n")?;
    write_file(&dir.join("summary.csv"), report.summary_csv())?;
    write_file(&dir.join("per_class.csv"), report.per_class_csv())
}

/// Diagnostics tables and plot series derived from one set of outcomes.
pub fn write_diagnostics(
    reports: &Path,
    plot_data: &Path,
    outcomes: &[PerExampleOutcome],
    fairness: &FairnessReport,
    attack_steps: usize,
    drop_step: usize,
) -> Result<(OverconfidenceReport, StepHistogram)> {
    let over = ham_core::metrics::overconfidence_report(outcomes, fairness.num_classes())?;
    let hist = StepHistogram::new(outcomes, attack_steps)?;
    let mut csv = String::from("class,over_confident_proportion,robust_accuracy\n");
    for (c, (p, e)) in over.per_class_proportion.iter().zip(&fairness.per_class).enumerate() {
        csv.push_str(&format!("{c},{p},{}\n", 1.0 - e.robust));
    }
    write_file(&reports.join("overconfidence.csv"), csv)?;
    let json = serde_json::json!({
        "over_confident_proportion": over.per_class_proportion,
        "step_histogram": hist,
        "early_drop_step": drop_step,
        "easy_fraction_at_early_drop_step": hist.easy_fraction_at(drop_step),
    });
    write_file(&reports.join("diagnostics.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    write_file(&plot_data.join("scatter.txt"), over.scatter_lines())?;
    write_file(&plot_data.join("step_histogram.txt"), hist.lines())?;
    let mut per_class = String::new();
    for c in &fairness.per_class {
        per_class.push_str(&format!("{} {} {} {}\n", c.class, c.standard, c.boundary, c.robust));
    }
    write_file(&plot_data.join("per_class_errors.txt"), per_class)?;
    Ok((over, hist))
}

fn split_of<'a>(splits: &'a Splits, split: Split) -> &'a Dataset {
    match split {
        Split::Train => &splits.train,
        Split::Test => &splits.test,
    }
}
