//! Trains a compact model on in-memory synthetic data and prints the loss
//! trajectory. Uses a narrow two-block architecture so the run finishes in
//! about a minute on one core; swap in `ArchConfig::default()` for the
//! full-size model.
//!
//! ```text
//! cargo run --release --example train_small_model
//! ```

use calcseg::data::{generate_synthetic, Sample, SyntheticParams};
use calcseg::model::ArchConfig;
use calcseg::train::{train_on_samples, TrainConfig, TrainOptions};

fn main() -> calcseg::Result<()> {
    let samples: Vec<Sample> = (0..6u64)
        .map(|seed| {
            let s = generate_synthetic(&SyntheticParams {
                size: 256,
                seed,
                ..SyntheticParams::default()
            })?;
            Ok(Sample {
                image: s.image,
                mask: s.mask,
                record: s.record,
            })
        })
        .collect::<calcseg::Result<_>>()?;

    let arch = ArchConfig {
        num_blocks: 2,
        branch_kernels: vec![1, 3, 5, 9],
        branch_width: 8,
        final_kernel: 5,
        ..ArchConfig::default()
    };
    println!(
        "architecture: receptive field {}, {} parameters",
        arch.receptive_field(),
        arch.parameter_count()
    );

    let config = TrainConfig {
        epochs: 30,
        crop_size: 64,
        seed: 1,
        ..TrainConfig::default()
    };
    let (model, log) = train_on_samples(
        &samples,
        "example",
        &arch,
        &config,
        &TrainOptions::default(),
    )?;

    for record in log.epochs.iter().step_by(5) {
        println!(
            "epoch {:>3}: loss {:.4}, {} positives / {} hard negatives so far",
            record.epoch,
            record.mean_masked_loss,
            record.cum_positives,
            record.cum_selected_negatives
        );
    }
    let last = log.epochs.last().expect("at least one epoch");
    println!(
        "finished at epoch {} with mean masked loss {:.4}",
        last.epoch, last.mean_masked_loss
    );
    println!("trained model has {} parameters", model.parameter_count());
    Ok(())
}
