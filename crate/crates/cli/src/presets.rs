//! Named configurations.

use std::path::PathBuf;

use ham_core::attack::AttackConfig;
use ham_core::data::AugmentationConfig;
use ham_core::mining::MiningConfig;
use ham_core::train::{Milestone, TrainConfig};
use ham_core::{Architecture, DatasetKind, DatasetSpec};

use crate::config::{ConfigError, ExperimentConfig};

pub const NAMES: [&str; 3] = ["cifar10-full", "svhn-full", "mnist-desk"];

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    match name {
        "cifar10-full" => Ok(cifar10_full()),
        "svhn-full" => Ok(svhn_full()),
        "mnist-desk" => Ok(mnist_desk()),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

/// PreActResNet-18 on CIFAR-10 with the full 120-epoch schedule.
pub fn cifar10_full() -> ExperimentConfig {
    ExperimentConfig {
        run_id: "cifar10-ham".into(),
        output_dir: PathBuf::from("runs"),
        seeds: vec![0],
        dataset: DatasetSpec {
            kind: DatasetKind::Cifar10,
            train_per_class: None,
            test_per_class: None,
            synthetic: None,
        },
        model: Architecture::PreActResNet18 {
            input: [3, 32, 32],
            num_classes: 10,
        },
        train: TrainConfig {
            epochs: 120,
            batch_size: 128,
            learning_rate: 0.1,
            schedule: vec![
                Milestone { epoch: 60, factor: 0.1 },
                Milestone { epoch: 90, factor: 0.01 },
                Milestone { epoch: 110, factor: 0.005 },
            ],
            momentum: 0.9,
            weight_decay: 2e-4,
            seed: 0,
            attack: AttackConfig::linf(8.0 / 255.0, 2.0 / 255.0, 10).with_random_init(true),
            mining: MiningConfig::ham(3, 50),
            eval_attack: AttackConfig::linf(8.0 / 255.0, 2.0 / 255.0, 20),
            augmentation: AugmentationConfig {
                random_crop_padding: 4,
                horizontal_flip: true,
            },
            eval_every: 10,
        },
    }
}

/// The CIFAR-10 setup on SVHN with a lower rate and a later drop step.
pub fn svhn_full() -> ExperimentConfig {
    let mut c = cifar10_full();
    c.run_id = "svhn-ham".into();
    c.dataset.kind = DatasetKind::Svhn;
    c.train.learning_rate = 0.01;
    c.train.mining.early_drop_step = 5;
    c
}

/// Small CNN on 1000 MNIST digits per class; runs on a laptop CPU.
pub fn mnist_desk() -> ExperimentConfig {
    ExperimentConfig {
        run_id: "mnist-desk-ham".into(),
        output_dir: PathBuf::from("runs"),
        seeds: vec![0, 1, 2],
        dataset: DatasetSpec {
            kind: DatasetKind::MnistSubset,
            train_per_class: Some(1000),
            test_per_class: Some(500),
            synthetic: None,
        },
        model: Architecture::SmallCnn {
            input: [1, 28, 28],
            width: 8,
            num_classes: 10,
        },
        train: TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.1,
            schedule: vec![Milestone { epoch: 10, factor: 0.1 }, Milestone { epoch: 15, factor: 0.01 }],
            momentum: 0.9,
            weight_decay: 2e-4,
            seed: 0,
            attack: AttackConfig::linf(0.1, 0.025, 10).with_random_init(true),
            mining: MiningConfig::ham(3, 8),
            eval_attack: AttackConfig::linf(0.1, 0.025, 20),
            augmentation: AugmentationConfig::none(),
            eval_every: 1,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ham_core::mining::MiningMode;

    #[test]
    fn cifar_preset_carries_the_published_settings() {
        let c = cifar10_full();
        let t = &c.train;
        assert_eq!(t.epochs, 120);
        assert_eq!(t.batch_size, 128);
        assert_eq!(t.learning_rate, 0.1);
        assert_eq!(t.momentum, 0.9);
        assert_eq!(t.weight_decay, 2e-4);
        assert_eq!(t.attack.epsilon, 8.0 / 255.0);
        assert_eq!(t.attack.step_size, 2.0 / 255.0);
        assert_eq!(t.attack.steps, 10);
        assert_eq!(t.eval_attack.steps, 20);
        assert_eq!(t.eval_attack.epsilon, 8.0 / 255.0);
        assert_eq!(t.mining.mode, MiningMode::Ham);
        assert_eq!(t.mining.early_drop_step, 3);
        assert_eq!(t.mining.start_epoch, 50);
        assert!((t.lr_at(110) - 0.0005).abs() < 1e-15);
        c.validate().unwrap();
    }

    #[test]
    fn svhn_preset_differs_in_rate_and_drop_step() {
        let c = svhn_full();
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.mining.early_drop_step, 5);
        c.validate().unwrap();
    }

    #[test]
    fn desk_preset() {
        let c = mnist_desk();
        assert_eq!(c.dataset.train_per_class, Some(1000));
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.train.attack.epsilon, 0.1);
        assert_eq!(c.train.attack.step_size, 0.025);
        assert_eq!(c.train.mining.early_drop_step, 3);
        assert_eq!(c.train.mining.start_epoch, 8);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("imagenet"), Err(ConfigError::UnknownPreset(_))));
    }
}
