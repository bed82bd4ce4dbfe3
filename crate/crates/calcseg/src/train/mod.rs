//! Patch-based training with online hard negative mining.
//!
//! Every epoch walks the training images once. For each image a crop is cut
//! (with probability 0.5 centered on a random positive pixel, otherwise
//! uniform), augmented, and run through the model. The contribution mask
//! keeps all positive pixels plus the hardest negatives at the configured
//! ratio; gradients from all other negatives are discarded. Updates are
//! plain SGD with momentum at a fixed learning rate.

mod augment;
mod loss;
mod optim;

pub use augment::{apply_augmentation, augment, sample_augmentation, Augmentation};
pub use loss::{bce_loss_masked, bce_per_pixel, select_hard_negatives};
pub use optim::{sgd_momentum_step, OptimizerState};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, Model};
use crate::tensor::Grid2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Hard negatives selected per positive pixel (1:N).
    pub pos_neg_ratio: usize,
    pub epochs: usize,
    /// Training crop edge length; must be at least the receptive field.
    /// Images smaller than this are used whole.
    pub crop_size: usize,
    /// Rotation augmentation interval in degrees.
    pub rotation_range_deg: (f64, f64),
    pub hflip: bool,
    /// When false, every pixel contributes to the loss instead of only the
    /// positives and the mined hard negatives.
    pub hard_negative_mining: bool,
    /// Negatives selected when a crop contains no positives at all.
    pub fallback_negatives: usize,
    /// Snapshot the checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            pos_neg_ratio: 3,
            epochs: 500,
            crop_size: 256,
            rotation_range_deg: (-35.0, 35.0),
            hflip: true,
            hard_negative_mining: true,
            fallback_negatives: 64,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.pos_neg_ratio == 0 {
            return Err(Error::InvalidConfig(
                "pos_neg_ratio must be at least 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        let rf = arch.receptive_field();
        if self.crop_size < rf {
            return Err(Error::InvalidConfig(format!(
                "crop_size {} is smaller than the receptive field {rf}",
                self.crop_size
            )));
        }
        let (lo, hi) = self.rotation_range_deg;
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "rotation range ({lo}, {hi}) is inverted"
            )));
        }
        Ok(())
    }
}

/// One TrainingLog line.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean of the masked loss over the epoch's optimization steps.
    pub mean_masked_loss: f64,
    /// Positive pixels contributed so far, summed over all steps and epochs.
    pub cum_positives: u64,
    /// Hard negatives selected so far.
    pub cum_selected_negatives: u64,
    /// Wall-clock seconds for this epoch (0.000 in deterministic mode, so
    /// two runs of the same seed produce bit-identical logs).
    pub wall_clock_s: f64,
}

/// Mask composition of a single optimization step, recorded when
/// [`TrainOptions::record_steps`] is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Positive pixels in the crop (all of them enter the mask).
    pub positives: u64,
    /// Negative pixels available in the crop.
    pub negatives_available: u64,
    /// Negatives that entered the mask.
    pub negatives_selected: u64,
}

/// Per-epoch training history; serializes as a tab-separated file with a
/// header line. Step records are kept in memory only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

const LOG_COLUMNS: &str = "epoch\tmean_masked_loss\tcum_positives\tcum_selected_negatives\twall_clock_s";

impl TrainingLog {
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        writeln!(file, "{LOG_COLUMNS}")?;
        for r in &self.epochs {
            writeln!(
                file,
                "{}\t{:.6}\t{}\t{}\t{:.3}",
                r.epoch, r.mean_masked_loss, r.cum_positives, r.cum_selected_negatives, r.wall_clock_s
            )?;
        }
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let fail = |message: String| Error::FileFormat {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header == LOG_COLUMNS => {}
            other => {
                return Err(fail(format!(
                    "expected header {LOG_COLUMNS:?}, got {other:?}"
                )))
            }
        }
        let mut epochs = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(fail(format!("bad record {line:?}")));
            }
            let parse_err = |f: &str| fail(format!("bad field {f:?} in {line:?}"));
            epochs.push(EpochRecord {
                epoch: fields[0].parse().map_err(|_| parse_err(fields[0]))?,
                mean_masked_loss: fields[1].parse().map_err(|_| parse_err(fields[1]))?,
                cum_positives: fields[2].parse().map_err(|_| parse_err(fields[2]))?,
                cum_selected_negatives: fields[3].parse().map_err(|_| parse_err(fields[3]))?,
                wall_clock_s: fields[4].parse().map_err(|_| parse_err(fields[4]))?,
            });
        }
        Ok(Self {
            epochs,
            steps: Vec::new(),
        })
    }
}

/// Where training writes its checkpoint, and whether timing is recorded.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoint destination; written every `checkpoint_every` epochs
    /// (overwriting the previous snapshot) and at completion. `None` trains
    /// purely in memory.
    pub checkpoint_path: Option<PathBuf>,
    /// Zero out the wall-clock column so repeated runs produce bit-identical
    /// logs.
    pub deterministic: bool,
    /// Record the mask composition of every optimization step in
    /// [`TrainingLog::steps`].
    pub record_steps: bool,
}

/// Loads the dataset's samples and trains on them.
pub fn train(
    dataset: &Dataset,
    arch: &ArchConfig,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<(Model<f32>, TrainingLog)> {
    let samples = dataset.load_all()?;
    train_on_samples(&samples, dataset.tag(), arch, config, options)
}

/// Trains a freshly initialized model on in-memory samples. The returned log
/// has one record per epoch.
pub fn train_on_samples(
    samples: &[Sample],
    dataset_tag: &str,
    arch: &ArchConfig,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<(Model<f32>, TrainingLog)> {
    arch.validate()?;
    config.validate(arch)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }

    // Positive pixel coordinates per sample, for biased crop centers.
    let positives: Vec<Vec<(usize, usize)>> = samples
        .iter()
        .map(|s| {
            let mut coords = Vec::new();
            for y in 0..s.mask.height() {
                for x in 0..s.mask.width() {
                    if s.mask.get(y, x) != 0 {
                        coords.push((y, x));
                    }
                }
            }
            coords
        })
        .collect();
    if positives.iter().all(Vec::is_empty) {
        return Err(Error::NoPositivePixels);
    }

    let mut model = Model::<f32>::build(arch.clone(), config.seed)?;
    let mut optimizer = OptimizerState::new(&model);
    // Distinct stream from weight initialization, which also uses config.seed.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let lr = config.learning_rate as f32;
    let momentum = config.momentum as f32;

    let mut log = TrainingLog::default();
    let mut cum_positives = 0u64;
    let mut cum_selected_negatives = 0u64;
    let report_every = (config.epochs / 10).max(1);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;

        for (sample, sample_positives) in samples.iter().zip(&positives) {
            let (img_crop, mask_crop) = random_crop(sample, sample_positives, config, &mut rng);
            let (img_aug, mask_aug) = augment(&img_crop, &mask_crop, config, &mut rng);

            let input = img_aug.to_tensor();
            let labels = mask_aug.to_label_tensor::<f32>();
            let trace = model.forward_trace(&input)?;
            let mask = if config.hard_negative_mining {
                let per_pixel = bce_per_pixel(trace.logits(), &labels)?;
                select_hard_negatives(
                    &per_pixel,
                    &labels,
                    config.pos_neg_ratio,
                    config.fallback_negatives,
                )?
            } else {
                crate::tensor::Tensor::filled(labels.shape(), 1.0)
            };
            let (loss, grad_logits) = match bce_loss_masked(trace.logits(), &labels, &mask) {
                Err(Error::DegenerateBatch) => continue,
                other => other?,
            };
            let grads = model.backward(&trace, &grad_logits)?;
            sgd_momentum_step(&mut model, &grads, &mut optimizer, lr, momentum)?;

            let n_pos = labels.data().iter().filter(|&&y| y > 0.5).count() as u64;
            let n_sel = mask.data().iter().filter(|&&m| m > 0.5).count() as u64;
            cum_positives += n_pos;
            cum_selected_negatives += n_sel - n_pos;
            if options.record_steps {
                log.steps.push(StepRecord {
                    epoch,
                    positives: n_pos,
                    negatives_available: labels.len() as u64 - n_pos,
                    negatives_selected: n_sel - n_pos,
                });
            }
            loss_sum += f64::from(loss);
            steps += 1;
        }

        let record = EpochRecord {
            epoch,
            mean_masked_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            cum_positives,
            cum_selected_negatives,
            wall_clock_s: if options.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        };
        if epoch % report_every == 0 || epoch == config.epochs {
            log::info!(
                "epoch {epoch}/{}: mean masked loss {:.6}",
                config.epochs,
                record.mean_masked_loss
            );
        }
        log.epochs.push(record);

        if let Some(path) = &options.checkpoint_path {
            let periodic =
                config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
            if periodic || epoch == config.epochs {
                save_checkpoint(path, &model, dataset_tag)?;
            }
        }
    }

    Ok((model, log))
}

/// Cuts a `crop_size` square (or the whole image if it is smaller). With
/// probability 0.5 the crop is centered on a uniformly drawn positive pixel
/// (when the image has any), otherwise its origin is uniform.
fn random_crop(
    sample: &Sample,
    positives: &[(usize, usize)],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (Grid2<f32>, Grid2<u8>) {
    let (h, w) = (sample.image.height(), sample.image.width());
    let ch = config.crop_size.min(h);
    let cw = config.crop_size.min(w);
    let (y0, x0) = if rng.gen::<f64>() < 0.5 && !positives.is_empty() {
        let (py, px) = positives[rng.gen_range(0..positives.len())];
        (
            py.saturating_sub(ch / 2).min(h - ch),
            px.saturating_sub(cw / 2).min(w - cw),
        )
    } else {
        (rng.gen_range(0..=h - ch), rng.gen_range(0..=w - cw))
    };
    (
        sample.image.crop(y0, x0, ch, cw),
        sample.mask.crop(y0, x0, ch, cw),
    )
}
