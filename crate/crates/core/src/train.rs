//! Adversarial training loops: plain PGD-AT, HAM, and the dropping baselines.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{run_pgd_batch, AttackConfig};
use crate::data::{augment, batches, AugmentationConfig, Dataset, Splits};
use crate::error::{Error, Result};
use crate::metrics::{collect_outcomes, fairness_report, FairnessReport, PerExampleOutcome};
use crate::mining::{build_hard_batch, confidence_drop_mask, random_drop_mask, LossNormalization, MiningConfig, MiningMode};
use crate::model::{sgd_update, Checkpoint, Classifier, Mode, OptimizerState};
use crate::rng::RngStreams;
use crate::scalar::Scalar;

/// Learning-rate milestone: from `epoch` on the rate is `factor * initial`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Factors are absolute fractions of `learning_rate`, not compounding.
    pub schedule: Vec<Milestone>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub attack: AttackConfig,
    pub mining: MiningConfig,
    pub eval_attack: AttackConfig,
    pub augmentation: AugmentationConfig,
    /// Evaluate every this many epochs; 0 evaluates only after the last one.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(Error::Config("schedule epochs must be strictly increasing".into()));
            }
        }
        for m in &self.schedule {
            if m.epoch >= self.epochs.max(1) {
                return Err(Error::Config(format!(
                    "schedule epoch {} is not below the epoch count {}",
                    m.epoch, self.epochs
                )));
            }
            if !(m.factor > 0.0) || !m.factor.is_finite() {
                return Err(Error::Config(format!("schedule factor must be positive, got {}", m.factor)));
            }
        }
        self.attack.validate()?;
        self.eval_attack.validate()?;
        self.mining.validate(&self.attack)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(&self.schedule, self.learning_rate, epoch)
    }
}

/// Rate in effect at `epoch`: the factor of the latest milestone at or before it.
pub fn lr_at(schedule: &[Milestone], initial: f64, epoch: usize) -> f64 {
    let factor = schedule
        .iter()
        .take_while(|m| m.epoch <= epoch)
        .last()
        .map_or(1.0, |m| m.factor);
    initial * factor
}

/// Per-batch mining record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    /// Examples that entered the weight update.
    pub kept: usize,
    pub dropped: usize,
    pub attack_steps: u64,
    /// Weighted batch loss; `None` when the update was skipped.
    pub loss: Option<f64>,
    /// Histogram of kept weights over ten equal bins of `[0, 1]`.
    pub weight_histogram: [u32; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mode: MiningMode,
    pub mining_active: bool,
    /// Mean of the weighted batch losses over updated batches.
    pub mean_loss: f64,
    pub dropped_fraction: f64,
    /// Fraction kept for the update (the hard set when HAM is active).
    pub hard_fraction: f64,
    pub attack_steps: u64,
    pub examples: usize,
    pub batches: usize,
    pub skipped_batches: usize,
    pub learning_rate: f64,
    pub wall_seconds: f64,
}

fn weight_histogram(weights: &[f64]) -> [u32; 10] {
    let mut h = [0u32; 10];
    for &w in weights {
        h[((w * 10.0) as usize).min(9)] += 1;
    }
    h
}

/// Owns one training run's model, optimizer and random streams.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Classifier<T>,
    pub optimizer: OptimizerState<T>,
    pub rng: RngStreams,
    /// Next epoch to run.
    pub epoch: usize,
}

struct Selection<T> {
    images: Vec<T>,
    labels: Vec<usize>,
    weights: Vec<f64>,
    steps: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig, model: Classifier<T>) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&model, config.learning_rate, config.momentum, config.weight_decay)?;
        let rng = RngStreams::new(config.seed);
        Ok(Self {
            config,
            model,
            optimizer,
            rng,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(config: TrainConfig, checkpoint: Checkpoint<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            model: checkpoint.model,
            optimizer: checkpoint.optimizer,
            rng: checkpoint.rng,
            epoch: checkpoint.epoch,
        })
    }

    pub fn checkpoint(&self, metadata: serde_json::Value) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            metadata,
        }
    }

    fn clean_batch(&mut self, data: &Dataset, indices: &[usize]) -> (Vec<T>, Vec<usize>) {
        let aug = self.config.augmentation;
        if aug.is_identity() {
            return (data.gather_images(indices), data.gather_labels(indices));
        }
        let mut images = Vec::with_capacity(indices.len() * self.model.input_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let ex = augment(&data.examples[i], data.shape, &aug, &mut self.rng.data);
            images.extend(ex.image.iter().map(|&v| T::from_f32(v)));
            labels.push(ex.label);
        }
        (images, labels)
    }

    fn full_attack(&mut self, images: &[T], labels: &[usize]) -> Result<(Vec<T>, u64)> {
        let attack = self.config.attack;
        let trajectories = run_pgd_batch(&self.model, images, labels, &attack, false, None, &mut self.rng.attack)?;
        let steps = labels.len() as u64 * attack.steps as u64;
        Ok((trajectories.into_iter().flat_map(|t| t.adversarial).collect(), steps))
    }

    fn keep_unmasked(&mut self, images: &[T], labels: &[usize], dropped: &[bool]) -> (Vec<T>, Vec<usize>) {
        let d = self.model.input_len();
        let mut kept_images = Vec::new();
        let mut kept_labels = Vec::new();
        for (i, (&y, &drop)) in labels.iter().zip(dropped).enumerate() {
            if !drop {
                kept_images.extend_from_slice(&images[i * d..(i + 1) * d]);
                kept_labels.push(y);
            }
        }
        (kept_images, kept_labels)
    }

    fn select(&mut self, images: Vec<T>, labels: Vec<usize>, mining_active: bool) -> Result<Selection<T>> {
        let mining = self.config.mining;
        let mode = if mining_active { mining.mode } else { MiningMode::None };
        match mode {
            MiningMode::None => {
                let (adv, steps) = self.full_attack(&images, &labels)?;
                let weights = vec![1.0; labels.len()];
                Ok(Selection {
                    images: adv,
                    labels,
                    weights,
                    steps,
                })
            }
            MiningMode::Ham => {
                let hb = build_hard_batch(
                    &self.model,
                    &images,
                    &labels,
                    &self.config.attack,
                    &mining,
                    &mut self.rng.attack,
                )?;
                Ok(Selection {
                    images: hb.hard_images(),
                    labels: hb.hard_labels(),
                    weights: hb.weights(),
                    steps: hb.attack_steps,
                })
            }
            MiningMode::RandomDrop => {
                let dropped = random_drop_mask(labels.len(), mining.drop_rate, &mut self.rng.drop)?;
                let (kept_images, kept_labels) = self.keep_unmasked(&images, &labels, &dropped);
                let (adv, steps) = if kept_labels.is_empty() {
                    (Vec::new(), 0)
                } else {
                    self.full_attack(&kept_images, &kept_labels)?
                };
                let weights = vec![1.0; kept_labels.len()];
                Ok(Selection {
                    images: adv,
                    labels: kept_labels,
                    weights,
                    steps,
                })
            }
            MiningMode::ConfidenceDrop => {
                let (adv, steps) = self.full_attack(&images, &labels)?;
                let dropped = confidence_drop_mask(&self.model, &images, &adv, &labels, mining.drop_rate)?;
                let (kept_images, kept_labels) = self.keep_unmasked(&adv, &labels, &dropped);
                let weights = vec![1.0; kept_labels.len()];
                Ok(Selection {
                    images: kept_images,
                    labels: kept_labels,
                    weights,
                    steps,
                })
            }
        }
    }

    /// Runs the next epoch with the configured mode and start-epoch gating.
    pub fn train_epoch(&mut self, data: &Dataset, on_batch: &mut dyn FnMut(&BatchStats)) -> Result<EpochStats> {
        let active = self.config.mining.active_at(self.epoch);
        self.run_epoch(data, active, on_batch)
    }

    /// Runs the next epoch as plain PGD-AT regardless of the mining config.
    pub fn train_epoch_at(&mut self, data: &Dataset) -> Result<EpochStats> {
        self.run_epoch(data, false, &mut |_| {})
    }

    /// Runs the next epoch with HAM; before `start_epoch` this is plain PGD-AT.
    pub fn train_epoch_ham(&mut self, data: &Dataset) -> Result<EpochStats> {
        if self.config.mining.mode != MiningMode::Ham {
            return Err(Error::Config("train_epoch_ham needs mining mode ham".into()));
        }
        self.train_epoch(data, &mut |_| {})
    }

    fn run_epoch(&mut self, data: &Dataset, mining_active: bool, on_batch: &mut dyn FnMut(&BatchStats)) -> Result<EpochStats> {
        let started = Instant::now();
        let epoch = self.epoch;
        let lr = self.config.lr_at(epoch);
        self.optimizer.learning_rate = lr;
        let normalization = self.config.mining.normalization;
        let order = batches(data.len(), self.config.batch_size, self.config.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut updated = 0usize;
        let mut kept_total = 0usize;
        let mut steps_total = 0u64;
        let mut skipped = 0usize;
        for (b, indices) in order.iter().enumerate() {
            let n = indices.len();
            let (images, labels) = self.clean_batch(data, indices);
            let sel = self.select(images, labels, mining_active).map_err(|e| diagnose(e, epoch, b))?;
            let kept = sel.labels.len();
            kept_total += kept;
            steps_total += sel.steps;
            let loss = if kept == 0 {
                skipped += 1;
                None
            } else {
                let normalizer = match normalization {
                    LossNormalization::BatchSize => n as f64,
                    LossNormalization::KeptCount => kept as f64,
                };
                let wl = self
                    .model
                    .weighted_loss(&sel.images, &sel.labels, &sel.weights, normalizer, Mode::Train)
                    .map_err(|e| diagnose(e, epoch, b))?;
                sgd_update(&mut self.model, &mut self.optimizer, &wl.gradients).map_err(|e| diagnose(e, epoch, b))?;
                self.model.commit_statistics(&wl.tape);
                loss_sum += wl.loss;
                updated += 1;
                Some(wl.loss)
            };
            on_batch(&BatchStats {
                epoch,
                batch: b,
                size: n,
                kept,
                dropped: n - kept,
                attack_steps: sel.steps,
                loss,
                weight_histogram: weight_histogram(&sel.weights),
            });
        }
        self.epoch += 1;
        let examples = data.len();
        let frac = |k: usize| if examples == 0 { 0.0 } else { k as f64 / examples as f64 };
        Ok(EpochStats {
            epoch,
            mode: self.config.mining.mode,
            mining_active,
            mean_loss: if updated == 0 { 0.0 } else { loss_sum / updated as f64 },
            dropped_fraction: frac(examples - kept_total),
            hard_fraction: frac(kept_total),
            attack_steps: steps_total,
            examples,
            batches: order.len(),
            skipped_batches: skipped,
            learning_rate: lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Outcomes under the evaluation attack.
    ///
    /// Random starts, if enabled, come from a generator derived from the run
    /// seed and epoch, so evaluation never perturbs the training streams.
    pub fn evaluate(&self, data: &Dataset) -> Result<Vec<PerExampleOutcome>> {
        evaluate_with(&self.model, data, &self.config.eval_attack, self.config.seed, self.epoch)
    }
}

pub fn evaluate_with<T: Scalar>(
    model: &Classifier<T>,
    data: &Dataset,
    attack: &AttackConfig,
    seed: u64,
    epoch: usize,
) -> Result<Vec<PerExampleOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 40) + epoch as u64);
    collect_outcomes(model, data, attack, &mut rng)
}

fn diagnose(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "{what} at epoch {epoch}, batch {batch}; training aborted (learning rate too high or diverging model)"
        )),
        other => other,
    }
}

/// Callbacks invoked by [`run_training`].
pub trait TrainingHooks<T> {
    fn on_batch(&mut self, _stats: &BatchStats) -> Result<()> {
        Ok(())
    }

    /// Called after every epoch with the trainer already advanced.
    fn on_epoch(&mut self, _trainer: &Trainer<T>, _stats: &EpochStats) -> Result<()> {
        Ok(())
    }

    fn on_evaluation(&mut self, _epoch: usize, _report: &FairnessReport, _outcomes: &[PerExampleOutcome]) -> Result<()> {
        Ok(())
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl<T> TrainingHooks<T> for NoHooks {}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T> {
    pub trainer: Trainer<T>,
    pub stats: Vec<EpochStats>,
    /// `(epoch, report)` for every evaluation, in order.
    pub reports: Vec<(usize, FairnessReport)>,
}

/// Trains from `trainer.epoch` to `config.epochs`, evaluating on the configured cadence.
pub fn run_training<T: Scalar>(
    mut trainer: Trainer<T>,
    splits: &Splits,
    hooks: &mut dyn TrainingHooks<T>,
) -> Result<TrainingOutcome<T>> {
    let mut stats = Vec::new();
    let mut reports = Vec::new();
    let epochs = trainer.config.epochs;
    let every = trainer.config.eval_every;
    while trainer.epoch < epochs {
        let mut hook_error = None;
        let s = trainer.train_epoch(&splits.train, &mut |b| {
            if hook_error.is_none() {
                hook_error = hooks.on_batch(b).err();
            }
        })?;
        if let Some(e) = hook_error {
            return Err(e);
        }
        hooks.on_epoch(&trainer, &s)?;
        let done = trainer.epoch;
        if done == epochs || (every > 0 && done % every == 0) {
            let outcomes = trainer.evaluate(&splits.test)?;
            let report = fairness_report(&outcomes, splits.test.num_classes)?;
            hooks.on_evaluation(s.epoch, &report, &outcomes)?;
            reports.push((s.epoch, report));
        }
        stats.push(s);
    }
    Ok(TrainingOutcome {
        trainer,
        stats,
        reports,
    })
}
