//! K-step projected gradient descent with trajectory recording.
//!
//! A run can stop at an intermediate step and be resumed later; the resumed
//! trajectory is bit-identical to an uninterrupted run.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Classifier, Mode};
use crate::scalar::Scalar;

/// Norm of the perturbation budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "linf", alias = "inf")]
    Linf,
    #[serde(rename = "l2")]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Perturbation budget in pixel units.
    pub epsilon: f64,
    /// Per-iteration step in pixel units.
    pub step_size: f64,
    /// Total iterations `K`.
    pub steps: usize,
    pub norm: Norm,
    /// Start from a uniform point of the budget ball instead of the clean image.
    pub random_init: bool,
}

impl AttackConfig {
    /// L-infinity PGD without random start.
    pub fn linf(epsilon: f64, step_size: f64, steps: usize) -> Self {
        Self {
            epsilon,
            step_size,
            steps,
            norm: Norm::Linf,
            random_init: false,
        }
    }

    pub fn with_random_init(mut self, random_init: bool) -> Self {
        self.random_init = random_init;
        self
    }

    /// `epsilon = 0` is accepted as the degenerate no-perturbation budget.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("attack step size must be > 0, got {}", self.step_size)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        if self.norm == Norm::Linf && self.epsilon > 0.0 && self.step_size > 2.0 * self.epsilon {
            return Err(Error::Config(format!(
                "linf step size {} exceeds twice the budget {}",
                self.step_size, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Record of one PGD run on one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrajectory<T> {
    pub label: usize,
    pub config: AttackConfig,
    /// Current (final, when the run is complete) iterate.
    pub adversarial: Vec<T>,
    /// Eval-mode logits at steps `0..=steps_executed`, when recording.
    pub per_step_logits: Option<Vec<Vec<T>>>,
    /// Logits at the current iterate.
    pub last_logits: Vec<T>,
    /// First step `j >= 1` whose prediction differs from the label.
    pub crossing_step: Option<usize>,
    /// `max_j ||f(x^{j+1}) - f(x^j)||_1` over recorded adjacent steps.
    pub max_logits_delta: f64,
    pub steps_executed: usize,
}

impl<T: Scalar> AttackTrajectory<T> {
    pub fn prediction(&self) -> usize {
        argmax(&self.last_logits)
    }

    /// True when the current iterate is misclassified.
    pub fn is_misclassified(&self) -> bool {
        self.prediction() != self.label
    }

    fn record(&mut self, logits: &[T], step: usize) {
        if step == 0 {
            self.last_logits = logits.to_vec();
        } else {
            let delta: f64 = logits
                .iter()
                .zip(&self.last_logits)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .sum();
            self.max_logits_delta = self.max_logits_delta.max(delta);
            if self.crossing_step.is_none() && argmax(logits) != self.label {
                self.crossing_step = Some(step);
            }
            self.last_logits.clear();
            self.last_logits.extend_from_slice(logits);
        }
        if let Some(rec) = &mut self.per_step_logits {
            rec.push(logits.to_vec());
        }
    }
}

fn check_shapes<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("point has {} values, origin has {}", a.len(), b.len())));
    }
    Ok(())
}

/// Projects onto the budget ball around `origin` intersected with `[0, 1]`.
pub fn project<T: Scalar>(point: &[T], origin: &[T], config: &AttackConfig) -> Result<Vec<T>> {
    check_shapes(point, origin)?;
    let mut p = point.to_vec();
    project_in_place(&mut p, origin, config);
    Ok(p)
}

fn l2_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, o)| (x.as_f64() - o.as_f64()).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn project_in_place<T: Scalar>(point: &mut [T], origin: &[T], config: &AttackConfig) {
    let eps = config.epsilon;
    match config.norm {
        Norm::Linf => {
            let e = T::from_f64(eps);
            for (x, &o) in point.iter_mut().zip(origin) {
                let lo = (o - e).max(T::zero());
                let hi = (o + e).min(T::one());
                *x = x.max(lo).min(hi);
            }
        }
        Norm::L2 => {
            // Radial scaling, then the box clamp (which never leaves the ball
            // because the origin lies in the box). Rounding of the rescaled
            // iterate can overshoot by a few ulps, so shrink until feasible.
            let mut dist = l2_distance(point, origin);
            let mut shrink = 1.0;
            while dist > eps {
                let scale = if dist > 0.0 { shrink * eps / dist } else { 0.0 };
                for (x, &o) in point.iter_mut().zip(origin) {
                    *x = o + T::from_f64((x.as_f64() - o.as_f64()) * scale);
                }
                dist = l2_distance(point, origin);
                shrink *= 1.0 - 4.0 * T::epsilon().as_f64();
            }
            for x in point.iter_mut() {
                *x = x.max(T::zero()).min(T::one());
            }
        }
    }
}

/// Ascent direction applied in place: `alpha * sign(g)` or `alpha * g / ||g||_2`.
fn ascend<T: Scalar>(x: &mut [T], grad: &[T], config: &AttackConfig) {
    match config.norm {
        Norm::Linf => {
            let alpha = T::from_f64(config.step_size);
            for (v, &g) in x.iter_mut().zip(grad) {
                if g > T::zero() {
                    *v = *v + alpha;
                } else if g < T::zero() {
                    *v = *v - alpha;
                }
            }
        }
        Norm::L2 => {
            let norm = grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                let s = config.step_size / norm;
                for (v, &g) in x.iter_mut().zip(grad) {
                    *v = *v + T::from_f64(g.as_f64() * s);
                }
            }
        }
    }
}

#[cfg(debug_assertions)]
fn debug_check_feasible<T: Scalar>(x: &[T], origin: &[T], config: &AttackConfig) {
    let inside_box = x.iter().all(|v| *v >= T::zero() && *v <= T::one());
    let dist = match config.norm {
        Norm::Linf => x
            .iter()
            .zip(origin)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max),
        Norm::L2 => l2_distance(x, origin),
    };
    debug_assert!(inside_box, "PGD iterate left the pixel box");
    debug_assert!(dist <= config.epsilon + 1e-7, "PGD iterate left the budget ball ({dist})");
}

#[cfg(not(debug_assertions))]
fn debug_check_feasible<T: Scalar>(_: &[T], _: &[T], _: &AttackConfig) {}

/// One ascent step from `current` followed by projection.
pub fn pgd_step<T: Scalar>(
    model: &Classifier<T>,
    current: &[T],
    origin: &[T],
    label: usize,
    config: &AttackConfig,
) -> Result<Vec<T>> {
    check_shapes(current, origin)?;
    let grad = model.input_gradient(current, label)?;
    let mut next = current.to_vec();
    ascend(&mut next, &grad, config);
    project_in_place(&mut next, origin, config);
    debug_check_feasible(&next, origin, config);
    Ok(next)
}

fn start_point<T: Scalar, R: Rng + ?Sized>(origin: &[T], config: &AttackConfig, rng: &mut R) -> Vec<T> {
    let mut x = origin.to_vec();
    if config.random_init && config.epsilon > 0.0 {
        match config.norm {
            Norm::Linf => {
                for (v, &o) in x.iter_mut().zip(origin) {
                    let d: f64 = rng.random_range(-config.epsilon..=config.epsilon);
                    *v = o + T::from_f64(d);
                }
            }
            Norm::L2 => {
                let dir: Vec<f64> = (0..origin.len()).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let u: f64 = rng.random();
                let radius = config.epsilon * u.powf(1.0 / origin.len() as f64);
                for ((v, &o), d) in x.iter_mut().zip(origin).zip(&dir) {
                    *v = o + T::from_f64(d / norm * radius);
                }
            }
        }
        project_in_place(&mut x, origin, config);
    }
    x
}

/// Advances every trajectory from its current step to `target` steps.
fn advance<T: Scalar>(
    model: &Classifier<T>,
    trajectories: &mut [AttackTrajectory<T>],
    origins: &[T],
    target: usize,
) -> Result<()> {
    let d = model.input_len();
    let n = trajectories.len();
    if n == 0 {
        return Ok(());
    }
    if origins.len() != n * d {
        return Err(Error::Shape(format!("{} origin values for {n} trajectories", origins.len())));
    }
    let start = trajectories[0].steps_executed;
    if trajectories.iter().any(|t| t.steps_executed != start) {
        return Err(Error::ResumeMismatch("trajectories in one batch are at different steps".into()));
    }
    let k = model.num_classes();
    let labels: Vec<usize> = trajectories.iter().map(|t| t.label).collect();
    let fresh = start == 0 && trajectories[0].last_logits.is_empty();
    let mut batch = Vec::with_capacity(n * d);
    for j in start..target {
        batch.clear();
        for t in trajectories.iter() {
            batch.extend_from_slice(&t.adversarial);
        }
        let (logits, grads) = model.input_gradients(&batch, &labels)?;
        for (i, t) in trajectories.iter_mut().enumerate() {
            if j > start || fresh {
                t.record(&logits[i * k..(i + 1) * k], j);
            }
            let origin = &origins[i * d..(i + 1) * d];
            ascend(&mut t.adversarial, &grads[i * d..(i + 1) * d], &t.config);
            project_in_place(&mut t.adversarial, origin, &t.config);
            debug_check_feasible(&t.adversarial, origin, &t.config);
            t.steps_executed = j + 1;
        }
    }
    if target > start || fresh {
        batch.clear();
        for t in trajectories.iter() {
            batch.extend_from_slice(&t.adversarial);
        }
        let logits = model.forward_flat(&batch, Mode::Eval)?;
        for (i, t) in trajectories.iter_mut().enumerate() {
            t.record(&logits[i * k..(i + 1) * k], target);
        }
    }
    Ok(())
}

/// Runs PGD on a batch of images (flat, `input_len` values each).
///
/// Executes `min(stop_at, K)` steps. Random starts are drawn per example in
/// batch order.
pub fn run_pgd_batch<T: Scalar, R: Rng + ?Sized>(
    model: &Classifier<T>,
    images: &[T],
    labels: &[usize],
    config: &AttackConfig,
    record_trajectory: bool,
    stop_at: Option<usize>,
    rng: &mut R,
) -> Result<Vec<AttackTrajectory<T>>> {
    config.validate()?;
    let d = model.input_len();
    if images.len() != labels.len() * d {
        return Err(Error::Shape(format!(
            "{} image values for {} labels of {d}-value images",
            images.len(),
            labels.len()
        )));
    }
    let k = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: k,
        });
    }
    let target = stop_at.map_or(config.steps, |s| s.min(config.steps));
    let mut trajectories: Vec<AttackTrajectory<T>> = images
        .chunks_exact(d)
        .zip(labels)
        .map(|(origin, &label)| AttackTrajectory {
            label,
            config: *config,
            adversarial: start_point(origin, config, rng),
            per_step_logits: record_trajectory.then(Vec::new),
            last_logits: Vec::new(),
            crossing_step: None,
            max_logits_delta: 0.0,
            steps_executed: 0,
        })
        .collect();
    advance(model, &mut trajectories, images, target)?;
    Ok(trajectories)
}

/// Continues stopped trajectories to the full `K` steps.
pub fn resume_pgd_batch<T: Scalar>(
    model: &Classifier<T>,
    mut trajectories: Vec<AttackTrajectory<T>>,
    origins: &[T],
    config: &AttackConfig,
) -> Result<Vec<AttackTrajectory<T>>> {
    for t in &trajectories {
        if t.config != *config {
            return Err(Error::ResumeMismatch(format!(
                "trajectory was produced with {:?}, resume requested with {:?}",
                t.config, config
            )));
        }
        if t.steps_executed > config.steps {
            return Err(Error::ResumeMismatch("trajectory already exceeds the step budget".into()));
        }
    }
    advance(model, &mut trajectories, origins, config.steps)?;
    Ok(trajectories)
}

/// Single-example form of [`run_pgd_batch`].
pub fn run_pgd<T: Scalar, R: Rng + ?Sized>(
    model: &Classifier<T>,
    image: &[T],
    label: usize,
    config: &AttackConfig,
    record_trajectory: bool,
    stop_at: Option<usize>,
    rng: &mut R,
) -> Result<AttackTrajectory<T>> {
    if image.len() != model.input_len() {
        return Err(Error::Shape(format!(
            "image has {} values, expected {}",
            image.len(),
            model.input_len()
        )));
    }
    let mut v = run_pgd_batch(model, image, &[label], config, record_trajectory, stop_at, rng)?;
    Ok(v.remove(0))
}

/// Single-example form of [`resume_pgd_batch`].
pub fn resume_pgd<T: Scalar>(
    model: &Classifier<T>,
    trajectory: AttackTrajectory<T>,
    image: &[T],
    config: &AttackConfig,
) -> Result<AttackTrajectory<T>> {
    let mut v = resume_pgd_batch(model, vec![trajectory], image, config)?;
    Ok(v.remove(0))
}
