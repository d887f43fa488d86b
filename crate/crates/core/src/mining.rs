//! Easy/hard partition of adversarial examples and the dropping baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{resume_pgd_batch, run_pgd_batch, AttackConfig, AttackTrajectory};
use crate::error::{Error, Result};
use crate::model::{argmax, true_class_confidence, Classifier, Mode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    /// Plain PGD adversarial training.
    None,
    Ham,
    RandomDrop,
    ConfidenceDrop,
}

/// Denominator of the weighted batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNormalization {
    /// Divide by the full batch size; dropped examples shrink the gradient.
    BatchSize,
    /// Divide by the number of examples kept for the update.
    KeptCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    pub mode: MiningMode,
    /// `M`: attack steps after which correctly classified examples are dropped.
    pub early_drop_step: usize,
    /// `lambda` in `sigmoid(z + lambda)`.
    pub lambda_shift: f64,
    /// First epoch (0-based) in which mining is applied.
    pub start_epoch: usize,
    /// Drop fraction for [`MiningMode::RandomDrop`] and [`MiningMode::ConfidenceDrop`].
    pub drop_rate: f64,
    pub normalization: LossNormalization,
    /// Treat every example as hard. Only useful for testing reductions.
    #[serde(default)]
    pub force_hard: bool,
}

impl MiningConfig {
    /// Plain adversarial training.
    pub fn none() -> Self {
        Self {
            mode: MiningMode::None,
            early_drop_step: 1,
            lambda_shift: 0.0,
            start_epoch: 0,
            drop_rate: 0.0,
            normalization: LossNormalization::BatchSize,
            force_hard: false,
        }
    }

    pub fn ham(early_drop_step: usize, start_epoch: usize) -> Self {
        Self {
            mode: MiningMode::Ham,
            early_drop_step,
            start_epoch,
            ..Self::none()
        }
    }

    pub fn validate(&self, attack: &AttackConfig) -> Result<()> {
        if self.early_drop_step == 0 || self.early_drop_step > attack.steps {
            return Err(Error::Config(format!(
                "early_drop_step must be in 1..={}, got {}",
                attack.steps, self.early_drop_step
            )));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::Config(format!("drop_rate must be in [0, 1), got {}", self.drop_rate)));
        }
        if !self.lambda_shift.is_finite() {
            return Err(Error::Config("lambda_shift must be finite".into()));
        }
        Ok(())
    }

    /// Whether mining replaces plain adversarial training at `epoch`.
    pub fn active_at(&self, epoch: usize) -> bool {
        self.mode != MiningMode::None && epoch >= self.start_epoch
    }
}

/// `sigmoid(z + lambda)`, evaluated without overflow.
///
/// In `f64` the result rounds to exactly 1 once `z + lambda` exceeds about 37
/// and underflows to 0 below about -745.
pub fn hardness_weight(max_logits_delta: f64, lambda_shift: f64) -> f64 {
    let t = max_logits_delta + lambda_shift;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Easy,
    Hard,
}

/// Easy iff the stopped iterate is still classified as the true label.
pub fn assess_at_m<T: Scalar>(trajectory: &AttackTrajectory<T>) -> Verdict {
    if argmax(&trajectory.last_logits) == trajectory.label {
        Verdict::Easy
    } else {
        Verdict::Hard
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardnessAssessment {
    pub is_hard: bool,
    /// `sigmoid(z + lambda)` for hard examples, 0 for easy ones.
    pub weight: f64,
    /// `z`: the largest L1 logit change between adjacent attack steps.
    pub max_logits_delta: f64,
}

/// Result of mining one batch.
#[derive(Debug, Clone)]
pub struct HardBatch<T> {
    /// Per example, in batch order. Easy examples carry their step-`M` delta.
    pub assessments: Vec<HardnessAssessment>,
    /// Batch positions of the hard examples.
    pub hard_indices: Vec<usize>,
    /// Finished `K`-step trajectories of the hard examples.
    pub hard: Vec<AttackTrajectory<T>>,
    /// Attack iterations spent: `n * M + |hard| * (K - M)`.
    pub attack_steps: u64,
}

impl<T: Scalar> HardBatch<T> {
    pub fn weights(&self) -> Vec<f64> {
        self.hard_indices.iter().map(|&i| self.assessments[i].weight).collect()
    }

    pub fn hard_images(&self) -> Vec<T> {
        self.hard.iter().flat_map(|t| t.adversarial.iter().copied()).collect()
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        self.hard.iter().map(|t| t.label).collect()
    }

    pub fn easy_count(&self) -> usize {
        self.assessments.len() - self.hard_indices.len()
    }
}

/// Attacks all examples for `M` steps, drops the easy ones and finishes the rest.
pub fn build_hard_batch<T: Scalar, R: Rng + ?Sized>(
    model: &Classifier<T>,
    images: &[T],
    labels: &[usize],
    attack: &AttackConfig,
    mining: &MiningConfig,
    rng: &mut R,
) -> Result<HardBatch<T>> {
    mining.validate(attack)?;
    let d = model.input_len();
    let m = mining.early_drop_step;
    let stopped = run_pgd_batch(model, images, labels, attack, false, Some(m), rng)?;
    let mut assessments = Vec::with_capacity(stopped.len());
    let mut hard_indices = Vec::new();
    let mut pending = Vec::new();
    let mut origins = Vec::new();
    for (i, t) in stopped.into_iter().enumerate() {
        let is_hard = mining.force_hard || assess_at_m(&t) == Verdict::Hard;
        assessments.push(HardnessAssessment {
            is_hard,
            weight: 0.0,
            max_logits_delta: t.max_logits_delta,
        });
        if is_hard {
            hard_indices.push(i);
            origins.extend_from_slice(&images[i * d..(i + 1) * d]);
            pending.push(t);
        }
    }
    let hard = if pending.is_empty() {
        pending
    } else {
        resume_pgd_batch(model, pending, &origins, attack)?
    };
    for (&i, t) in hard_indices.iter().zip(&hard) {
        assessments[i].max_logits_delta = t.max_logits_delta;
        assessments[i].weight = hardness_weight(t.max_logits_delta, mining.lambda_shift);
    }
    let n = labels.len() as u64;
    let attack_steps = n * m as u64 + hard.len() as u64 * (attack.steps - m) as u64;
    Ok(HardBatch {
        assessments,
        hard_indices,
        hard,
        attack_steps,
    })
}

fn check_rate(drop_rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&drop_rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("drop_rate must be in [0, 1), got {drop_rate}")))
    }
}

/// Independent Bernoulli drops; `true` marks a dropped example.
pub fn random_drop_mask<R: Rng + ?Sized>(n: usize, drop_rate: f64, rng: &mut R) -> Result<Vec<bool>> {
    check_rate(drop_rate)?;
    Ok((0..n).map(|_| rng.random_bool(drop_rate)).collect())
}

/// Drops the `floor(rate * n)` largest gaps; ties keep input order.
pub fn confidence_gap_drop_mask(gaps: &[f64], drop_rate: f64) -> Result<Vec<bool>> {
    check_rate(drop_rate)?;
    let count = (drop_rate * gaps.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..gaps.len()).collect();
    order.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]));
    let mut mask = vec![false; gaps.len()];
    for &i in &order[..count] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Ranks by adversarial minus clean true-class confidence and drops the top fraction.
pub fn confidence_drop_mask<T: Scalar>(
    model: &Classifier<T>,
    clean: &[T],
    adversarial: &[T],
    labels: &[usize],
    drop_rate: f64,
) -> Result<Vec<bool>> {
    check_rate(drop_rate)?;
    let k = model.num_classes();
    let clean_logits = model.forward_flat(clean, Mode::Eval)?;
    let adv_logits = model.forward_flat(adversarial, Mode::Eval)?;
    if clean_logits.len() != labels.len() * k || adv_logits.len() != labels.len() * k {
        return Err(Error::Shape("clean and adversarial batches differ in size".into()));
    }
    let gaps = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let c = true_class_confidence(&clean_logits[i * k..(i + 1) * k], y)?;
            let a = true_class_confidence(&adv_logits[i * k..(i + 1) * k], y)?;
            Ok(a - c)
        })
        .collect::<Result<Vec<f64>>>()?;
    confidence_gap_drop_mask(&gaps, drop_rate)
}
