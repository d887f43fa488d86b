use ham_core::attack::{run_pgd_batch, AttackConfig};
use ham_core::data::{Dataset, LabeledExample, Splits};
use ham_core::mining::{MiningConfig, MiningMode};
use ham_core::model::{cross_entropy, Checkpoint, Mode};
use ham_core::train::{run_training, EpochStats, NoHooks, TrainConfig, Trainer};
use ham_core::Classifier;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::{max_relative_difference, mlp, toy_config, two_gaussians};

fn strip_timing(s: &[EpochStats]) -> Vec<EpochStats> {
    s.iter()
        .cloned()
        .map(|mut e| {
            e.wall_seconds = 0.0;
            e
        })
        .collect()
}

fn forced_ham() -> MiningConfig {
    MiningConfig {
        lambda_shift: 50.0,
        force_hard: true,
        ..MiningConfig::ham(3, 0)
    }
}

#[test]
fn forced_hard_ham_reduces_to_plain_at() {
    let data = two_gaussians(128, 1);
    let model = mlp::<f32>(2, 16, 2, 4);
    let mut at = Trainer::new(toy_config(MiningConfig::none(), 3), model.clone()).unwrap();
    let mut ham = Trainer::new(toy_config(forced_ham(), 3), model).unwrap();
    for epoch in 0..3 {
        let a = at.train_epoch(&data, &mut |_| {}).unwrap();
        let h = ham.train_epoch(&data, &mut |_| {}).unwrap();
        assert!(h.mining_active);
        assert_eq!(h.dropped_fraction, 0.0);
        assert_eq!(a.attack_steps, h.attack_steps);
        let diff = max_relative_difference(&at.model.flat_params(), &ham.model.flat_params());
        assert!(diff <= 1e-6, "epoch {epoch}: relative difference {diff}");
    }
}

#[test]
fn mining_before_start_epoch_is_plain_at() {
    let data = two_gaussians(96, 2);
    let model = mlp::<f32>(2, 16, 2, 5);
    let mut at = Trainer::new(toy_config(MiningConfig::none(), 3), model.clone()).unwrap();
    let mut ham = Trainer::new(toy_config(MiningConfig::ham(3, 2), 3), model).unwrap();
    for _ in 0..2 {
        let a = at.train_epoch(&data, &mut |_| {}).unwrap();
        let h = ham.train_epoch_ham(&data).unwrap();
        assert!(!h.mining_active);
        assert_eq!(h.dropped_fraction, 0.0);
        assert_eq!(a.attack_steps, h.attack_steps);
        assert!(max_relative_difference(&at.model.flat_params(), &ham.model.flat_params()) <= 1e-6);
    }
    let a = at.train_epoch(&data, &mut |_| {}).unwrap();
    let h = ham.train_epoch_ham(&data).unwrap();
    assert!(h.mining_active);
    assert!(h.attack_steps <= a.attack_steps);
}

#[test]
fn drop_baselines_before_start_epoch_are_plain_at() {
    let data = two_gaussians(64, 2);
    let model = mlp::<f32>(2, 8, 2, 6);
    for mode in [MiningMode::RandomDrop, MiningMode::ConfidenceDrop] {
        let mining = MiningConfig {
            mode,
            drop_rate: 0.3,
            start_epoch: 1,
            ..MiningConfig::none()
        };
        let mut at = Trainer::new(toy_config(MiningConfig::none(), 2), model.clone()).unwrap();
        let mut b = Trainer::new(toy_config(mining, 2), model.clone()).unwrap();
        at.train_epoch(&data, &mut |_| {}).unwrap();
        b.train_epoch(&data, &mut |_| {}).unwrap();
        assert_eq!(at.model.flat_params(), b.model.flat_params());
        let s = b.train_epoch(&data, &mut |_| {}).unwrap();
        assert!(s.mining_active && s.dropped_fraction > 0.0, "{mode:?}");
    }
}

#[test]
fn removed_and_zero_weighted_examples_give_equal_gradients() {
    let model = mlp::<f64>(4, 6, 3, 9);
    let images: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).fract()).collect();
    let labels = [0, 1, 2, 1, 0];
    let weights = [0.7, 0.0, 0.9, 0.0, 0.6];
    let full = model.weighted_loss(&images, &labels, &weights, 5.0, Mode::Train).unwrap();
    let keep = [0, 2, 4];
    let kept_images: Vec<f64> = keep.iter().flat_map(|&i| images[i * 4..(i + 1) * 4].to_vec()).collect();
    let kept_labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    let kept_weights: Vec<f64> = keep.iter().map(|&i| weights[i]).collect();
    let removed = model.weighted_loss(&kept_images, &kept_labels, &kept_weights, 5.0, Mode::Train).unwrap();
    assert!((full.loss - removed.loss).abs() < 1e-15);
    for (a, b) in full.gradients.0.iter().zip(&removed.gradients.0) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

/// Half the examples sit far from the boundary of a fixed linear model, half right on it.
fn half_easy_fixture() -> (Classifier<f32>, Dataset) {
    let model = Classifier::linear([1, 2, 1], vec![1.0, -1.0, -1.0, 1.0], vec![0.0, 0.0]).unwrap();
    let examples = (0..64)
        .map(|i| LabeledExample {
            image: if i % 2 == 0 { vec![0.95, 0.05] } else { vec![0.505, 0.495] },
            label: 0,
        })
        .collect();
    (model, Dataset::new("half-easy", [1, 2, 1], 2, examples).unwrap())
}

#[test]
fn half_easy_epoch_costs_65_percent_of_at() {
    let (model, data) = half_easy_fixture();
    let mut config = toy_config(MiningConfig::ham(3, 0), 1);
    config.learning_rate = 0.0;
    config.attack = AttackConfig::linf(0.05, 0.02, 10);
    let mut ham = Trainer::new(config.clone(), model.clone()).unwrap();
    let mut at = Trainer::new(TrainConfig { mining: MiningConfig::none(), ..config }, model).unwrap();
    let h = ham.train_epoch(&data, &mut |_| {}).unwrap();
    let a = at.train_epoch(&data, &mut |_| {}).unwrap();
    assert_eq!(a.attack_steps, 640);
    assert_eq!(h.attack_steps, 64 * 3 + 32 * 7);
    assert_eq!(h.attack_steps as f64 / a.attack_steps as f64, 0.65);
    assert_eq!(h.dropped_fraction, 0.5);
    assert_eq!(h.hard_fraction, 0.5);
}

#[test]
fn all_easy_batches_skip_the_update() {
    let model = Classifier::<f32>::linear([1, 2, 1], vec![1.0, -1.0, -1.0, 1.0], vec![0.0, 0.0]).unwrap();
    let examples = (0..40)
        .map(|_| LabeledExample {
            image: vec![0.95, 0.05],
            label: 0,
        })
        .collect();
    let data = Dataset::new("easy", [1, 2, 1], 2, examples).unwrap();
    let mut config = toy_config(MiningConfig::ham(3, 0), 1);
    config.attack = AttackConfig::linf(0.05, 0.02, 10);
    config.batch_size = 16;
    let mut t = Trainer::new(config, model.clone()).unwrap();
    let s = t.train_epoch(&data, &mut |_| {}).unwrap();
    assert_eq!(s.skipped_batches, 3);
    assert_eq!(s.attack_steps, 40 * 3);
    assert_eq!(t.model.flat_params(), model.flat_params());
}

fn adversarial_loss(model: &Classifier<f32>, data: &Dataset, attack: &AttackConfig) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let images = data.gather_images::<f32>(&idx);
    let labels = data.gather_labels(&idx);
    let t = run_pgd_batch(model, &images, &labels, attack, false, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    t.iter().map(|t| cross_entropy(&t.last_logits, t.label).unwrap()).sum::<f64>() / t.len() as f64
}

#[test]
fn one_epoch_on_a_single_batch_lowers_the_loss() {
    let mut improved = 0;
    for seed in 0..3 {
        let data = two_gaussians(16, seed);
        let mut config = toy_config(MiningConfig::none(), 1);
        config.seed = seed;
        config.momentum = 0.0;
        let probe = AttackConfig::linf(0.1, 0.025, 10);
        let model = mlp::<f32>(2, 16, 2, seed);
        let before = adversarial_loss(&model, &data, &probe);
        let mut t = Trainer::new(config, model).unwrap();
        let s = t.train_epoch_at(&data).unwrap();
        assert_eq!(s.batches, 1);
        if adversarial_loss(&t.model, &data, &probe) < before {
            improved += 1;
        }
    }
    assert!(improved >= 2, "loss went down for {improved} of 3 seeds");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = two_gaussians(64, 3);
    let mut config = toy_config(MiningConfig::ham(3, 1), 3);
    config.augmentation.horizontal_flip = true;
    let model = mlp::<f32>(2, 8, 2, 1);
    let mut straight = Trainer::new(config.clone(), model.clone()).unwrap();
    let mut first = Trainer::new(config.clone(), model).unwrap();
    straight.train_epoch(&data, &mut |_| {}).unwrap();
    first.train_epoch(&data, &mut |_| {}).unwrap();
    let bytes = first.checkpoint(serde_json::json!({"note": "epoch 1"})).to_bytes().unwrap();
    drop(first);
    let mut resumed = Trainer::<f32>::from_checkpoint(config, Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.epoch, 1);
    for _ in 1..3 {
        let a = straight.train_epoch(&data, &mut |_| {}).unwrap();
        let b = resumed.train_epoch(&data, &mut |_| {}).unwrap();
        assert_eq!(a.mean_loss, b.mean_loss);
        assert_eq!(a.attack_steps, b.attack_steps);
    }
    assert_eq!(straight.model.flat_params(), resumed.model.flat_params());
    assert_eq!(straight.rng, resumed.rng);
}

#[test]
fn identical_configs_give_identical_runs() {
    let splits = Splits {
        train: two_gaussians(64, 4),
        test: two_gaussians(16, 5),
    };
    let mut config = toy_config(MiningConfig::ham(2, 1), 3);
    config.eval_every = 1;
    let run = || {
        let t = Trainer::new(config.clone(), mlp::<f32>(2, 8, 2, 2)).unwrap();
        run_training(t, &splits, &mut NoHooks).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.trainer.model.flat_params(), b.trainer.model.flat_params());
    assert_eq!(strip_timing(&a.stats), strip_timing(&b.stats));
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.reports.len(), 3);
}
