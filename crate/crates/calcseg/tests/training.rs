//! Checks the training loop end to end: hard-negative bookkeeping,
//! determinism, loss trend, and augmentation mass preservation.

use calcseg::data::{generate_synthetic, Sample, SyntheticParams};
use calcseg::model::ArchConfig;
use calcseg::train::{
    augment, train_on_samples, TrainConfig, TrainOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn slim_arch() -> ArchConfig {
    ArchConfig {
        num_blocks: 2,
        branch_kernels: vec![1, 3],
        branch_width: 4,
        final_kernel: 5,
        ..ArchConfig::default()
    }
}

fn synthetic_samples(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            let params = SyntheticParams {
                size,
                min_positive_fraction: Some(2e-3),
                max_positive_fraction: Some(2e-2),
                seed: seed + i as u64,
                ..SyntheticParams::default()
            };
            let s = generate_synthetic(&params).unwrap();
            Sample {
                image: s.image,
                mask: s.mask,
                record: s.record,
            }
        })
        .collect()
}

fn base_config() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        crop_size: 64,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_bitwise_identical_models_and_logs() {
    let samples = synthetic_samples(4, 96, 50);
    let arch = slim_arch();
    let config = base_config();
    let options = TrainOptions {
        deterministic: true,
        ..TrainOptions::default()
    };

    let (model_a, log_a) = train_on_samples(&samples, "det", &arch, &config, &options).unwrap();
    let (model_b, log_b) = train_on_samples(&samples, "det", &arch, &config, &options).unwrap();

    let params_a = model_a.flatten_parameters();
    let params_b = model_b.flatten_parameters();
    assert_eq!(params_a, params_b, "parameters diverged between runs");
    assert_eq!(log_a.epochs.len(), log_b.epochs.len());
    for (a, b) in log_a.epochs.iter().zip(&log_b.epochs) {
        assert_eq!(a.mean_masked_loss.to_bits(), b.mean_masked_loss.to_bits());
        assert_eq!(a.cum_positives, b.cum_positives);
        assert_eq!(a.cum_selected_negatives, b.cum_selected_negatives);
        assert_eq!(a.wall_clock_s, 0.0);
    }

    let other_seed = TrainConfig {
        seed: 4,
        ..config
    };
    let (model_c, _) = train_on_samples(&samples, "det", &arch, &other_seed, &options).unwrap();
    assert_ne!(params_a, model_c.flatten_parameters());
}

#[test]
fn every_step_selects_the_promised_negative_count() {
    let samples = synthetic_samples(3, 96, 80);
    let arch = slim_arch();
    let config = TrainConfig {
        epochs: 8,
        ..base_config()
    };
    let options = TrainOptions {
        deterministic: true,
        record_steps: true,
        ..TrainOptions::default()
    };
    let (_, log) = train_on_samples(&samples, "ohnm", &arch, &config, &options).unwrap();
    assert_eq!(log.steps.len(), 8 * 3);

    let mut saw_positives = false;
    for step in &log.steps {
        let want = if step.positives > 0 {
            saw_positives = true;
            (config.pos_neg_ratio as u64 * step.positives).min(step.negatives_available)
        } else {
            (config.fallback_negatives as u64).min(step.negatives_available)
        };
        assert_eq!(
            step.negatives_selected, want,
            "epoch {}: positives {} negatives {} selected {}",
            step.epoch, step.positives, step.negatives_available, step.negatives_selected
        );
    }
    assert!(saw_positives, "no step ever saw a positive pixel");
}

#[test]
fn loss_trends_downward_over_training() {
    let samples = synthetic_samples(3, 96, 20);
    let arch = slim_arch();
    let config = TrainConfig {
        epochs: 40,
        learning_rate: 0.005,
        ..base_config()
    };
    let (_, log) = train_on_samples(
        &samples,
        "trend",
        &arch,
        &config,
        &TrainOptions::default(),
    )
    .unwrap();

    let tenth = (log.epochs.len() / 10).max(1);
    let head: f64 = log.epochs[..tenth].iter().map(|e| e.mean_masked_loss).sum::<f64>() / tenth as f64;
    let tail: f64 = log.epochs[log.epochs.len() - tenth..]
        .iter()
        .map(|e| e.mean_masked_loss)
        .sum::<f64>()
        / tenth as f64;
    assert!(
        tail < head,
        "mean masked loss did not fall: first tenth {head}, last tenth {tail}"
    );
}

#[test]
fn flip_only_augmentation_preserves_positive_mass_exactly() {
    let samples = synthetic_samples(2, 128, 500);
    let config = TrainConfig {
        rotation_range_deg: (0.0, 0.0),
        hflip: true,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for sample in &samples {
        let before = sample.mask.data().iter().filter(|&&m| m != 0).count();
        for _ in 0..25 {
            let (image, mask) = augment(&sample.image, &sample.mask, &config, &mut rng);
            let after = mask.data().iter().filter(|&&m| m != 0).count();
            assert_eq!(before, after);
            assert_eq!(image.height(), sample.image.height());
            assert_eq!(image.width(), sample.image.width());
        }
    }
}

#[test]
fn rotation_keeps_masks_binary_and_mass_roughly_stable() {
    // Nearest-neighbour resampling jitters component boundaries and frame
    // corners clip, but rotation must not wipe out or smear the labels.
    let samples = synthetic_samples(2, 128, 500);
    let config = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for sample in &samples {
        let before = sample.mask.data().iter().filter(|&&m| m != 0).count();
        for _ in 0..25 {
            let (_, mask) = augment(&sample.image, &sample.mask, &config, &mut rng);
            assert!(mask.data().iter().all(|&m| m == 0 || m == 1));
            let after = mask.data().iter().filter(|&&m| m != 0).count();
            assert!(
                (after as f64) >= 0.5 * before as f64 && (after as f64) <= 1.5 * before as f64,
                "positive mass moved implausibly: {before} -> {after}"
            );
        }
    }
}

#[test]
fn checkpoint_written_during_training_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cseg");
    let samples = synthetic_samples(2, 96, 70);
    let arch = slim_arch();
    let config = TrainConfig {
        epochs: 4,
        checkpoint_every: 2,
        ..base_config()
    };
    let options = TrainOptions {
        checkpoint_path: Some(path.clone()),
        deterministic: true,
        ..TrainOptions::default()
    };
    let (model, _) = train_on_samples(&samples, "ckpt", &arch, &config, &options).unwrap();

    let (reloaded, tag) = calcseg::checkpoint::load_checkpoint(&path).unwrap();
    assert_eq!(model.flatten_parameters(), reloaded.flatten_parameters());
    assert_eq!(tag, "ckpt");
}
