//! PGD adversarial training with hard adversarial example mining.
//!
//! Easy adversarial examples (still correctly classified after `M` attack
//! steps) are dropped early; hard ones are attacked to `K` steps and weighted
//! by `sigmoid(max_j ||f(x^{j+1}) - f(x^j)||_1 + lambda)`. The crate also
//! provides the class-wise robust fairness metrics used to evaluate it.

pub mod attack;
pub mod data;
mod error;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod train;

pub use attack::{AttackConfig, AttackTrajectory, Norm};
pub use data::{Dataset, DatasetKind, DatasetSpec, LabeledExample};
pub use error::{Error, Result};
pub use metrics::{FairnessReport, OverconfidenceReport, PerExampleOutcome, StepHistogram};
pub use mining::{HardnessAssessment, LossNormalization, MiningConfig, MiningMode};
pub use model::{Architecture, Classifier, Mode, OptimizerState};
pub use rng::RngStreams;
pub use scalar::Scalar;
pub use train::{EpochStats, TrainConfig, Trainer};
