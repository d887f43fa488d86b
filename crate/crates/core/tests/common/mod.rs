#![allow(dead_code)]

use ham_core::attack::AttackConfig;
use ham_core::data::{AugmentationConfig, SyntheticSpec};
use ham_core::mining::MiningConfig;
use ham_core::train::TrainConfig;
use ham_core::{Architecture, Classifier, Dataset, Scalar};

pub fn mlp<T: Scalar>(input: usize, hidden: usize, classes: usize, seed: u64) -> Classifier<T> {
    Classifier::new(
        Architecture::Mlp {
            input: [1, input, 1],
            hidden,
            num_classes: classes,
        },
        seed,
    )
    .unwrap()
}

pub fn two_gaussians(per_class: usize, seed: u64) -> Dataset {
    SyntheticSpec::default().generate(per_class, seed, 0).unwrap()
}

pub fn toy_config(mining: MiningConfig, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 0.1,
        schedule: vec![],
        momentum: 0.9,
        weight_decay: 2e-4,
        seed: 7,
        attack: AttackConfig::linf(0.1, 0.025, 10).with_random_init(true),
        mining,
        eval_attack: AttackConfig::linf(0.1, 0.025, 20),
        augmentation: AugmentationConfig::none(),
        eval_every: 0,
    }
}

/// Largest elementwise relative difference between two parameter vectors.
pub fn max_relative_difference<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(1e-12)
        })
        .fold(0.0, f64::max)
}
