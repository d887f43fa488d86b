use std::path::PathBuf;

use anyhow::Result;
use clap::ValueEnum;
use ham_core::metrics::fairness_report;
use ham_core::train::evaluate_with;
use ham_core::{OverconfidenceReport, StepHistogram};

use super::{checkpoint_and_config, load_splits, split_of, write_diagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone)]
pub struct DiagnoseArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub split: Split,
    /// Root receiving `reports/` and `plot-data/`. Defaults to the run
    /// directory for the test split and `<run>/diagnose-train` otherwise, so
    /// training-set diagnostics never replace the test-set ones.
    pub out: Option<PathBuf>,
}

pub struct Diagnosis {
    pub overconfidence: OverconfidenceReport,
    pub histogram: StepHistogram,
    pub robust_accuracy: Vec<f64>,
    pub early_drop_step: usize,
    pub out: PathBuf,
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<Diagnosis> {
    let (ckpt, config, run) = checkpoint_and_config(&args.checkpoint, args.config.as_deref(), args.preset.as_deref())?;
    let out = match (&args.out, run, args.split) {
        (Some(out), _, _) => out.clone(),
        (None, Some(run), Split::Test) => run,
        (None, Some(run), Split::Train) => run.join("diagnose-train"),
        (None, None, _) => PathBuf::from("."),
    };
    let splits = load_splits(&config)?;
    let data = split_of(&splits, args.split);
    let attack = &config.train.eval_attack;
    let outcomes = evaluate_with(&ckpt.model, data, attack, config.train.seed, ckpt.epoch)?;
    let fairness = fairness_report(&outcomes, data.num_classes)?;
    let m = config.train.mining.early_drop_step;
    let (overconfidence, histogram) =
        write_diagnostics(&out.join("reports"), &out.join("plot-data"), &outcomes, &fairness, attack.steps, m)?;
    Ok(Diagnosis {
        overconfidence,
        histogram,
        robust_accuracy: fairness.per_class.iter().map(|c| 1.0 - c.robust).collect(),
        early_drop_step: m,
        out,
    })
}
