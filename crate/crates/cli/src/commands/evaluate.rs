use std::path::PathBuf;

use anyhow::Result;
use ham_core::metrics::{fairness_report, FairnessReport};
use ham_core::train::evaluate_with;

use super::{checkpoint_and_config, load_splits, split_of, write_fairness, Split};

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub split: Split,
    /// Output directory; defaults to the run's `reports/`.
    pub out: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(FairnessReport, PathBuf)> {
    let (ckpt, config, run) = checkpoint_and_config(&args.checkpoint, args.config.as_deref(), args.preset.as_deref())?;
    let out = match (&args.out, &run) {
        (Some(out), _) => out.clone(),
        (None, Some(run)) => run.join("reports"),
        (None, None) => PathBuf::from("reports"),
    };
    let splits = load_splits(&config)?;
    let data = split_of(&splits, args.split);
    let outcomes = evaluate_with(&ckpt.model, data, &config.train.eval_attack, config.train.seed, ckpt.epoch)?;
    let report = fairness_report(&outcomes, data.num_classes)?;
    write_fairness(&out, &report)?;
    Ok((report, out))
}
