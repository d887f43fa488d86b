use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ham_core::data::Splits;
use ham_core::metrics::{FairnessReport, PerExampleOutcome};
use ham_core::model::{load_checkpoint, save_checkpoint};
use ham_core::train::{run_training, BatchStats, EpochStats, Trainer, TrainingHooks};
use ham_core::Classifier;
use serde::Serialize;

use super::{load_splits, resolve_config, write_diagnostics, write_fairness};
use crate::config::ExperimentConfig;
use crate::run_dir::{RunDirectory, FINAL_CHECKPOINT, LATEST_CHECKPOINT};

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    /// Existing run directory to continue.
    pub resume: Option<PathBuf>,
    /// Run directory; defaults to `<output_dir>/<run_id>`.
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

/// Final numbers of a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub seed: u64,
    pub report: FairnessReport,
    pub attack_steps: u64,
    pub epochs: Vec<EpochStats>,
}

struct RunHooks<'a> {
    run: &'a mut RunDirectory,
    label: String,
    epochs: usize,
    quiet: bool,
    last_outcomes: Vec<PerExampleOutcome>,
}

impl TrainingHooks<f32> for RunHooks<'_> {
    fn on_batch(&mut self, stats: &BatchStats) -> ham_core::Result<()> {
        self.run.record("batch", Some(stats.epoch), stats).map_err(io_error)
    }

    fn on_epoch(&mut self, trainer: &Trainer<f32>, stats: &EpochStats) -> ham_core::Result<()> {
        self.run.record("epoch", Some(stats.epoch), stats).map_err(io_error)?;
        let meta = serde_json::json!({ "label": self.label });
        save_checkpoint(&trainer.checkpoint(meta), &self.run.path(LATEST_CHECKPOINT))?;
        if !self.quiet {
            eprintln!(
                "[{}] epoch {:>3}/{}  loss {:.4}  kept {:.3}  attack steps {}  lr {:.2e}  {:.1}s",
                self.label,
                stats.epoch + 1,
                self.epochs,
                stats.mean_loss,
                stats.hard_fraction,
                stats.attack_steps,
                stats.learning_rate,
                stats.wall_seconds
            );
        }
        Ok(())
    }

    fn on_evaluation(&mut self, epoch: usize, report: &FairnessReport, outcomes: &[PerExampleOutcome]) -> ham_core::Result<()> {
        self.run.record("evaluation", Some(epoch), report).map_err(io_error)?;
        if !self.quiet {
            eprintln!(
                "[{}] eval after epoch {}: avg rob {:.2}%  worst rob {:.2}%  std-dev {:.2}%",
                self.label,
                epoch + 1,
                100.0 * report.average.robust,
                100.0 * report.worst.robust,
                100.0 * report.robust_accuracy_std
            );
        }
        self.last_outcomes = outcomes.to_vec();
        Ok(())
    }
}

fn io_error(e: anyhow::Error) -> ham_core::Error {
    ham_core::Error::Io(std::io::Error::other(format!("{e:#}")))
}

/// Trains `config` into a fresh run directory at `root`.
pub fn execute_run(config: &ExperimentConfig, splits: &Splits, root: &Path, quiet: bool) -> Result<RunSummary> {
    let mut run = RunDirectory::create(root, config)?;
    let model = Classifier::<f32>::new(config.model.clone(), config.train.seed)?;
    run.record(
        "run_start",
        None,
        &serde_json::json!({
            "run_id": config.run_id,
            "seed": config.train.seed,
            "train_examples": splits.train.len(),
            "test_examples": splits.test.len(),
            "parameters": model.parameter_count(),
        }),
    )?;
    let trainer = Trainer::new(config.train.clone(), model)?;
    finish(config, splits, &mut run, trainer, quiet)
}

fn finish(
    config: &ExperimentConfig,
    splits: &Splits,
    run: &mut RunDirectory,
    trainer: Trainer<f32>,
    quiet: bool,
) -> Result<RunSummary> {
    let label = format!("{} seed {}", config.run_id, config.train.seed);
    let mut hooks = RunHooks {
        run,
        label,
        epochs: config.train.epochs,
        quiet,
        last_outcomes: Vec::new(),
    };
    let outcome = run_training(trainer, splits, &mut hooks).context("training failed")?;
    let outcomes = std::mem::take(&mut hooks.last_outcomes);
    let run_dir = hooks.run.root().to_path_buf();
    let trainer = outcome.trainer;
    let meta = serde_json::json!({ "label": hooks.label });
    save_checkpoint(&trainer.checkpoint(meta), &hooks.run.path(FINAL_CHECKPOINT))?;
    let (report, outcomes) = match outcome.reports.last() {
        Some((_, r)) if !outcomes.is_empty() => (r.clone(), outcomes),
        // Nothing was trained in this invocation: evaluate the stored model.
        _ => {
            let outcomes = trainer.evaluate(&splits.test)?;
            let report = ham_core::metrics::fairness_report(&outcomes, splits.test.num_classes)?;
            (report, outcomes)
        }
    };
    write_fairness(&hooks.run.path("reports"), &report)?;
    write_diagnostics(
        &hooks.run.path("reports"),
        &hooks.run.path("plot-data"),
        &outcomes,
        &report,
        config.train.eval_attack.steps,
        config.train.mining.early_drop_step,
    )?;
    let attack_steps = outcome.stats.iter().map(|s| s.attack_steps).sum();
    hooks.run.record(
        "run_end",
        Some(trainer.epoch),
        &serde_json::json!({ "attack_steps": attack_steps, "report": report }),
    )?;
    Ok(RunSummary {
        run_dir,
        seed: config.train.seed,
        report,
        attack_steps,
        epochs: outcome.stats,
    })
}

pub fn train(args: &TrainArgs) -> Result<RunSummary> {
    if let Some(root) = &args.resume {
        if args.config.is_some() || args.preset.is_some() || args.seed.is_some() {
            bail!("--resume continues the run with its own config snapshot; drop --config/--preset/--seed");
        }
        let config = RunDirectory::load_config(root)?;
        let splits = load_splits(&config)?;
        let latest = root.join(LATEST_CHECKPOINT);
        let mut run = RunDirectory::open(root)?;
        let trainer = if latest.is_file() {
            let ckpt = load_checkpoint::<f32>(&latest).with_context(|| format!("loading {}", latest.display()))?;
            Trainer::from_checkpoint(config.train.clone(), ckpt)?
        } else {
            let model = Classifier::<f32>::new(config.model.clone(), config.train.seed)?;
            Trainer::new(config.train.clone(), model)?
        };
        run.record("resume", Some(trainer.epoch), &())?;
        return finish(&config, &splits, &mut run, trainer, args.quiet);
    }
    let mut config = resolve_config(args.config.as_deref(), args.preset.as_deref())?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.validate()?;
    let root = args.out.clone().unwrap_or_else(|| config.output_dir.join(&config.run_id));
    // Load data before touching the disk so a missing dataset leaves nothing behind.
    let splits = load_splits(&config)?;
    execute_run(&config, &splits, &root, args.quiet)
}
