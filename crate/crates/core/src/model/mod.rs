//! Differentiable classifiers, loss, optimizer and checkpoints.

mod checkpoint;
pub mod layers;
pub mod loss;
mod network;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use layers::{Mode, Shape3};
pub use loss::{argmax, cross_entropy, softmax, true_class_confidence};
pub use network::{Architecture, Classifier, Gradients, Tape, WeightedLoss};
pub use optim::{sgd_update, OptimizerState};
