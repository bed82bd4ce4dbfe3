//! Trains briefly, evaluates on held-out synthetic images, and writes the
//! three curve files: pixel ROC, pixel precision-recall, and
//! calcification-level FROC.
//!
//! ```text
//! cargo run --release --example evaluation_curves -- [OUT_DIR]
//! ```

use calcseg::data::{generate_synthetic, Sample, SyntheticParams};
use calcseg::eval::{froc, precision_recall_aps, roc_auc, write_curve_tsv};
use calcseg::infer::{predict_full, TileSpec};
use calcseg::model::ArchConfig;
use calcseg::train::{train_on_samples, TrainConfig, TrainOptions};

fn main() -> calcseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-eval".into());
    let out = std::path::Path::new(&out);
    std::fs::create_dir_all(out)?;

    let make = |seed: u64| -> calcseg::Result<Sample> {
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
    };
    let train_set: Vec<Sample> = (0..6u64).map(make).collect::<calcseg::Result<_>>()?;
    let test_set: Vec<Sample> = (100..104u64).map(make).collect::<calcseg::Result<_>>()?;

    let arch = ArchConfig {
        num_blocks: 2,
        branch_kernels: vec![1, 3, 5, 9],
        branch_width: 8,
        final_kernel: 5,
        ..ArchConfig::default()
    };
    let config = TrainConfig {
        epochs: 30,
        crop_size: 64,
        seed: 2,
        ..TrainConfig::default()
    };
    let (model, _) = train_on_samples(
        &train_set,
        "example",
        &arch,
        &config,
        &TrainOptions::default(),
    )?;

    let spec = TileSpec {
        tile_size: 256,
        halo: (model.receptive_field() - 1) / 2,
        strict: true,
    };
    let mut maps = Vec::new();
    let mut masks = Vec::new();
    for (i, sample) in test_set.iter().enumerate() {
        maps.push(predict_full(
            &model,
            &sample.image,
            &spec,
            0.1,
            &format!("held-out-{i}"),
        )?);
        masks.push(sample.mask.clone());
    }

    let roc = roc_auc(&maps, &masks)?;
    let pr = precision_recall_aps(&maps, &masks)?;
    let thresholds: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    let froc_curve = froc(&maps, &masks, &thresholds)?;

    println!("pixel AUC {:.4}", roc.summary.expect("auc"));
    println!("pixel APS {:.4}", pr.summary.expect("aps"));
    if let Some(last) = froc_curve.points.last() {
        println!(
            "FROC at loosest threshold: {:.2} FP/image, sensitivity {:.2}",
            last.0, last.1
        );
    }

    for (name, curve) in [("roc", &roc), ("pr", &pr), ("froc", &froc_curve)] {
        let path = out.join(format!("{name}.tsv"));
        write_curve_tsv(&path, curve)?;
        println!("{name} curve -> {}", path.display());
    }
    Ok(())
}
