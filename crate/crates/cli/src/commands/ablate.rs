use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use ham_core::data::Splits;
use ham_core::MiningMode;
use serde::{Deserialize, Serialize};

use super::{execute_run, load_splits, resolve_config, RunSummary};
use crate::config::ExperimentConfig;
use crate::run_dir::write_file;

/// Mining knob varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    EarlyDropStep,
    StartEpoch,
    DropRate,
    LambdaShift,
    Mode,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::EarlyDropStep => "early_drop_step",
            Self::StartEpoch => "start_epoch",
            Self::DropRate => "drop_rate",
            Self::LambdaShift => "lambda_shift",
            Self::Mode => "mode",
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: &toml::Value) -> Result<()> {
        let mining = &mut config.train.mining;
        let bad = || anyhow!("sweep value {value} is not valid for {}", self.name());
        let as_usize = || value.as_integer().and_then(|v| usize::try_from(v).ok()).ok_or_else(bad);
        let as_f64 = || value.as_float().or_else(|| value.as_integer().map(|v| v as f64)).ok_or_else(bad);
        match self {
            Self::EarlyDropStep => mining.early_drop_step = as_usize()?,
            Self::StartEpoch => mining.start_epoch = as_usize()?,
            Self::DropRate => mining.drop_rate = as_f64()?,
            Self::LambdaShift => mining.lambda_shift = as_f64()?,
            Self::Mode => {
                mining.mode = MiningMode::deserialize(value.clone()).map_err(|e| anyhow!("{}: {e}", self.name()))?
            }
        }
        Ok(())
    }
}

/// Sweep file: one parameter, a list of values, optional seed override.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    #[serde(default)]
    pub values: Vec<toml::Value>,
    pub seeds: Option<Vec<u64>>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing sweep {}", path.display()))
    }
}

#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub sweep: PathBuf,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

pub const SUMMARY_HEADER: &str = "parameter,value,seed,avg_standard,avg_boundary,avg_robust,worst_standard,worst_boundary,worst_robust,robust_accuracy_std,attack_steps,run_dir";

fn value_label(value: &toml::Value) -> String {
    match value {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

struct Job {
    value: String,
    config: ExperimentConfig,
    root: PathBuf,
}

/// Runs every (value, seed) pair and writes `<out>/summary.csv`.
pub fn run_ablation(args: &AblateArgs) -> Result<PathBuf> {
    let base = resolve_config(args.config.as_deref(), args.preset.as_deref())?;
    let sweep = SweepSpec::load(&args.sweep)?;
    let seeds = sweep.seeds.clone().unwrap_or_else(|| base.seeds.clone());
    let param = sweep.parameter.name();
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| base.output_dir.join(format!("{}-ablate-{param}", base.run_id)));

    let mut jobs = Vec::new();
    for value in &sweep.values {
        let label = value_label(value);
        for &seed in &seeds {
            let mut config = base.clone();
            sweep.parameter.apply(&mut config, value)?;
            config.train.seed = seed;
            config.run_id = format!("{}-{param}-{label}", base.run_id);
            config.validate().with_context(|| format!("{param} = {label}"))?;
            let root = out.join(format!("{param}-{label}")).join(format!("seed-{seed}"));
            jobs.push(Job {
                value: label.clone(),
                config,
                root,
            });
        }
    }
    // Data depends only on the seed, so load each split once up front.
    let mut splits: BTreeMap<u64, Splits> = BTreeMap::new();
    for job in &jobs {
        let seed = job.config.train.seed;
        if !splits.contains_key(&seed) {
            splits.insert(seed, load_splits(&job.config)?);
        }
    }

    let results: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = args.jobs.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let data = &splits[&job.config.train.seed];
                let r = execute_run(&job.config, data, &job.root, args.quiet);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    let mut failures = Vec::new();
    for (job, result) in jobs.iter().zip(results.into_inner().expect("results lock")) {
        match result.expect("every job ran") {
            Ok(s) => {
                let (a, w) = (&s.report.average, &s.report.worst);
                let _ = writeln!(
                    csv,
                    "{param},{},{},{},{},{},{},{},{},{},{},{}",
                    job.value,
                    s.seed,
                    a.standard,
                    a.boundary,
                    a.robust,
                    w.standard,
                    w.boundary,
                    w.robust,
                    s.report.robust_accuracy_std,
                    s.attack_steps,
                    s.run_dir.display()
                );
            }
            Err(e) => failures.push(format!("{param} = {} seed {}: {e:#}", job.value, job.config.train.seed)),
        }
    }
    write_file(&out.join("summary.csv"), csv)?;
    if !failures.is_empty() {
        bail!("{} of {} runs failed:\n  {}", failures.len(), jobs.len(), failures.join("\n  "));
    }
    Ok(out)
}
