//! Command-line pipeline: synthesize data, train, infer, evaluate, extract
//! statistics, compare follow-ups.
//!
//! Each command writes its artifacts plus a run record capturing the
//! effective configuration, seeds, and artifact checksums; feeding that
//! record back through `--config` reproduces the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::load_checkpoint;
use crate::config::{load_run_config, RunConfig, RunRecord};
use crate::data::{load_dataset, load_image_normalized, load_mask, ValidationMode};
use crate::error::{Error, Result};
use crate::eval::{froc, precision_recall_aps, roc_auc, write_curve_tsv, EvalCurve};
use crate::heatmap::render_heatmap_with;
use crate::infer::{load_probability_map, predict_full, save_probability_map, TileSpec};
use crate::morph::{
    compare_followup, connected_components, default_histogram_edges, read_stats, shape_stats,
    size_histogram, write_stats, Connectivity,
};
use crate::run_with_threads;
use crate::tensor::Grid2;
use crate::train::{train, TrainOptions};

/// Output-directory override: when set, relative output paths are resolved
/// beneath it.
pub const OUT_DIR_ENV: &str = "CALCSEG_OUT_DIR";

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(
    name = "calcseg",
    version,
    about = "Microcalcification segmentation: synthesize, train, infer, evaluate, measure"
)]
struct Cli {
    /// Configuration file (plain TOML or a run record from a previous run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration (generation, training,
    /// splitting).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; unset uses all cores. Results are identical either
    /// way, --threads 1 merely pins the pool for timing-stable test runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainSplit {
    /// The whole manifest.
    All,
    /// Only the training side of the configured split.
    Train,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalSplit {
    Test,
    Train,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with images, masks, and a manifest.
    Synth {
        /// Target directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of images.
        #[arg(long, default_value_t = 40)]
        count: usize,
        /// Image edge length, overriding the configuration.
        #[arg(long)]
        size: Option<usize>,
        /// Dataset tag recorded in the manifest and checkpoints.
        #[arg(long, default_value = "synthetic")]
        tag: String,
    },
    /// Train a model on a manifest and write a checkpoint plus the
    /// training log.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "model.cseg")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "train.log")]
        log: PathBuf,
        /// Epoch count, overriding the configuration.
        #[arg(long)]
        epochs: Option<usize>,
        /// Which part of the manifest to train on.
        #[arg(long, value_enum, default_value_t = TrainSplit::All)]
        split: TrainSplit,
        /// Zero the log's wall-clock column so reruns are bit-identical.
        #[arg(long)]
        deterministic: bool,
    },
    /// Run a checkpoint over one image and write the probability map and
    /// heatmap.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grayscale input image.
        #[arg(long)]
        image: PathBuf,
        /// Probability-map output; defaults to the image name with a .cmap
        /// extension.
        #[arg(long)]
        out_map: Option<PathBuf>,
        /// Heatmap output; defaults to the image name with a -heatmap.png
        /// suffix.
        #[arg(long)]
        out_heatmap: Option<PathBuf>,
        /// Tile edge length, overriding the configuration.
        #[arg(long)]
        tile: Option<usize>,
        /// Tile context margin, overriding the configuration.
        #[arg(long)]
        halo: Option<usize>,
        /// Pixel spacing of the input in millimeters.
        #[arg(long)]
        spacing: Option<f64>,
        /// Reject images smaller than the receptive field instead of
        /// padding.
        #[arg(long)]
        strict: bool,
    },
    /// Evaluate a checkpoint on a manifest split and write ROC, PR and
    /// FROC curves plus a summary table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        #[arg(long, default_value = "eval")]
        out_dir: PathBuf,
    },
    /// Extract calcification shape statistics from a probability map or a
    /// binary mask image.
    Stats {
        /// A .cmap probability map (binarized at the threshold) or a mask
        /// image (nonzero pixels are foreground).
        #[arg(long)]
        input: PathBuf,
        /// Binarization threshold for probability maps.
        #[arg(long)]
        threshold: Option<f64>,
        /// Pixel spacing in millimeters; defaults to the map's recorded
        /// spacing or the configured value for mask images.
        #[arg(long)]
        spacing: Option<f64>,
        /// Statistics output; defaults to the input name with a -stats.tsv
        /// suffix.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a component size histogram here.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Compare two statistics files from the same patient at different
    /// times.
    Compare {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value = "comparison.tsv")]
        out: PathBuf,
    },
}

/// Parses the arguments, runs the requested command, and returns the
/// process exit code. Diagnostics go to the error stream.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful output, not errors.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("info"),
    )
    .format_timestamp(None)
    .try_init();

    let threads = cli.threads.unwrap_or(0);
    match run_with_threads(threads, || dispatch(cli, threads)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                Error::NonFiniteGradient { .. } | Error::DegenerateBatch => EXIT_NUMERIC,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(cli: Cli, threads: usize) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.synth.seed = seed;
        config.eval.split_seed = seed;
    }
    match cli.command {
        Command::Synth {
            out,
            count,
            size,
            tag,
        } => cmd_synth(config, threads, &out, count, size, &tag),
        Command::Train {
            manifest,
            checkpoint,
            log,
            epochs,
            split,
            deterministic,
        } => cmd_train(
            config,
            threads,
            &manifest,
            &checkpoint,
            &log,
            epochs,
            split,
            deterministic,
        ),
        Command::Infer {
            checkpoint,
            image,
            out_map,
            out_heatmap,
            tile,
            halo,
            spacing,
            strict,
        } => cmd_infer(
            config,
            threads,
            &checkpoint,
            &image,
            out_map,
            out_heatmap,
            tile,
            halo,
            spacing,
            strict,
        ),
        Command::Eval {
            checkpoint,
            manifest,
            split,
            out_dir,
        } => cmd_eval(config, threads, &checkpoint, &manifest, split, &out_dir),
        Command::Stats {
            input,
            threshold,
            spacing,
            out,
            histogram,
        } => cmd_stats(config, threads, &input, threshold, spacing, out, histogram),
        Command::Compare { before, after, out } => {
            cmd_compare(config, threads, &before, &after, &out)
        }
    }
}

/// Resolves an output path against the output-directory override.
fn out_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn record_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_os_string();
    name.push(".run.toml");
    PathBuf::from(name)
}

fn derived_name(input: &Path, suffix: &str) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    PathBuf::from(format!("{stem}{suffix}"))
}

fn cmd_synth(
    mut config: RunConfig,
    threads: usize,
    out: &Path,
    count: usize,
    size: Option<usize>,
    tag: &str,
) -> Result<()> {
    if let Some(size) = size {
        config.synth.size = size;
    }
    let out = out_path(out);
    fs::create_dir_all(&out)?;
    let manifest = crate::data::emit_dataset(&out, &config.synth, count, tag)?;
    println!("wrote {count} samples and {}", manifest.display());

    let mut record = RunRecord::new("synth", threads, true, config);
    record.add_artifact(&manifest)?;
    record.write(&out.join("run-record.toml"))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    mut config: RunConfig,
    threads: usize,
    manifest: &Path,
    checkpoint: &Path,
    log: &Path,
    epochs: Option<usize>,
    split: TrainSplit,
    deterministic: bool,
) -> Result<()> {
    if let Some(epochs) = epochs {
        config.train.epochs = epochs;
    }
    let (dataset, _) = load_dataset(manifest, ValidationMode::FailFast)?;
    let dataset = match split {
        TrainSplit::All => dataset,
        TrainSplit::Train => {
            dataset
                .split(config.eval.train_fraction, config.eval.split_seed)?
                .0
        }
    };

    let checkpoint = out_path(checkpoint);
    let log = out_path(log);
    ensure_parent(&checkpoint)?;
    ensure_parent(&log)?;
    let options = TrainOptions {
        checkpoint_path: Some(checkpoint.clone()),
        deterministic,
        record_steps: false,
    };
    let (_, training_log) = train(&dataset, &config.arch, &config.train, &options)?;
    training_log.write_tsv(&log)?;
    let final_loss = training_log
        .epochs
        .last()
        .map_or(f64::NAN, |r| r.mean_masked_loss);
    println!(
        "trained {} epochs on {} samples, final mean masked loss {final_loss:.6}",
        config.train.epochs,
        dataset.len()
    );

    let mut record = RunRecord::new("train", threads, deterministic, config);
    record.add_artifact(&checkpoint)?;
    record.add_artifact(&log)?;
    record.write(&record_path(&checkpoint))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    mut config: RunConfig,
    threads: usize,
    checkpoint: &Path,
    image: &Path,
    out_map: Option<PathBuf>,
    out_heatmap: Option<PathBuf>,
    tile: Option<usize>,
    halo: Option<usize>,
    spacing: Option<f64>,
    strict: bool,
) -> Result<()> {
    if let Some(tile) = tile {
        config.infer.tile_size = tile;
    }
    if let Some(halo) = halo {
        config.infer.halo = Some(halo);
    }
    if let Some(spacing) = spacing {
        config.infer.pixel_spacing_mm = spacing;
    }
    config.infer.strict_size |= strict;

    let (model, tag) = load_checkpoint(checkpoint)?;
    let input = load_image_normalized(image)?;
    let spec = TileSpec {
        tile_size: config.infer.tile_size,
        halo: config
            .infer
            .halo
            .unwrap_or((model.receptive_field() - 1) / 2),
        strict: config.infer.strict_size,
    };
    let source_id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let map = predict_full(
        &model,
        &input,
        &spec,
        config.infer.pixel_spacing_mm as f32,
        &source_id,
    )?;

    let out_map = out_path(&out_map.unwrap_or_else(|| derived_name(image, ".cmap")));
    let out_heatmap =
        out_path(&out_heatmap.unwrap_or_else(|| derived_name(image, "-heatmap.png")));
    ensure_parent(&out_map)?;
    ensure_parent(&out_heatmap)?;
    save_probability_map(&out_map, &map)?;
    let heat = render_heatmap_with(&map, &input, config.infer.display_threshold as f32)?;
    heat.save(&out_heatmap).map_err(Error::Image)?;
    println!(
        "model for dataset {tag}: wrote {} and {}",
        out_map.display(),
        out_heatmap.display()
    );

    let mut record = RunRecord::new("infer", threads, true, config);
    record.add_artifact(&out_map)?;
    record.add_artifact(&out_heatmap)?;
    record.write(&record_path(&out_map))?;
    Ok(())
}

fn cmd_eval(
    config: RunConfig,
    threads: usize,
    checkpoint: &Path,
    manifest: &Path,
    split: EvalSplit,
    out_dir: &Path,
) -> Result<()> {
    let (model, tag) = load_checkpoint(checkpoint)?;
    let (dataset, _) = load_dataset(manifest, ValidationMode::FailFast)?;
    let dataset = match split {
        EvalSplit::All => dataset,
        _ => {
            let (train_part, test_part) =
                dataset.split(config.eval.train_fraction, config.eval.split_seed)?;
            match split {
                EvalSplit::Train => train_part,
                _ => test_part,
            }
        }
    };
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "the selected split contains no images".into(),
        ));
    }

    let spec = TileSpec {
        tile_size: config.infer.tile_size,
        halo: config
            .infer
            .halo
            .unwrap_or((model.receptive_field() - 1) / 2),
        strict: config.infer.strict_size,
    };
    let mut maps = Vec::with_capacity(dataset.len());
    let mut masks = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let sample = dataset.load_sample(i)?;
        let source_id = sample
            .record
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        maps.push(predict_full(
            &model,
            &sample.image,
            &spec,
            sample.record.pixel_spacing_mm,
            &source_id,
        )?);
        masks.push(sample.mask);
    }

    let roc = roc_auc(&maps, &masks)?;
    let pr = precision_recall_aps(&maps, &masks)?;
    let froc_curve = froc(&maps, &masks, &config.eval.froc_thresholds)?;

    let out_dir = out_path(out_dir);
    fs::create_dir_all(&out_dir)?;
    let split_name = match split {
        EvalSplit::Test => "test",
        EvalSplit::Train => "train",
        EvalSplit::All => "all",
    };
    let paths = [
        (out_dir.join("roc.tsv"), &roc),
        (out_dir.join("pr.tsv"), &pr),
        (out_dir.join("froc.tsv"), &froc_curve),
    ];
    for (path, curve) in &paths {
        write_curve_tsv(path, curve)?;
    }
    let summary_path = out_dir.join("summary.tsv");
    write_eval_summary(&summary_path, &tag, split_name, dataset.len(), &roc, &pr)?;
    println!(
        "evaluated {} images of {tag}/{split_name}: AUC {:.6}, APS {:.6}",
        dataset.len(),
        roc.summary.unwrap_or(f64::NAN),
        pr.summary.unwrap_or(f64::NAN)
    );

    let mut record = RunRecord::new("eval", threads, true, config);
    for (path, _) in &paths {
        record.add_artifact(path)?;
    }
    record.add_artifact(&summary_path)?;
    record.write(&out_dir.join("run-record.toml"))?;
    Ok(())
}

fn write_eval_summary(
    path: &Path,
    tag: &str,
    split: &str,
    images: usize,
    roc: &EvalCurve,
    pr: &EvalCurve,
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "#calcseg-eval-summary v1 dataset={tag} split={split} images={images}");
    let _ = writeln!(s, "metric\tvalue");
    let _ = writeln!(s, "pixel_auc\t{:.9}", roc.summary.unwrap_or(f64::NAN));
    let _ = writeln!(s, "pixel_aps\t{:.9}", pr.summary.unwrap_or(f64::NAN));
    fs::write(path, s)?;
    Ok(())
}

fn cmd_stats(
    config: RunConfig,
    threads: usize,
    input: &Path,
    threshold: Option<f64>,
    spacing: Option<f64>,
    out: Option<PathBuf>,
    histogram: Option<PathBuf>,
) -> Result<()> {
    let threshold = threshold.unwrap_or(config.eval.binarize_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} must lie in [0, 1]"
        )));
    }
    let is_map = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("cmap"));
    let (mask, file_spacing): (Grid2<u8>, f64) = if is_map {
        let map = load_probability_map(input)?;
        (
            map.binarize(threshold as f32),
            f64::from(map.pixel_spacing_mm),
        )
    } else {
        (load_mask(input)?, config.infer.pixel_spacing_mm)
    };
    let spacing = spacing.unwrap_or(file_spacing);

    let components = connected_components(&mask, Connectivity::Eight);
    let stats = shape_stats(&components, spacing)?;
    print!("{}", stats.render_table());

    let out = out_path(&out.unwrap_or_else(|| derived_name(input, "-stats.tsv")));
    ensure_parent(&out)?;
    write_stats(&out, &stats)?;
    let mut record = RunRecord::new("stats", threads, true, config);
    record.add_artifact(&out)?;

    if let Some(histogram) = histogram {
        let histogram = out_path(&histogram);
        ensure_parent(&histogram)?;
        let hist = size_histogram(std::slice::from_ref(&stats), &default_histogram_edges())?;
        fs::write(&histogram, hist.render_records())?;
        record.add_artifact(&histogram)?;
    }
    record.write(&record_path(&out))?;
    Ok(())
}

fn cmd_compare(
    config: RunConfig,
    threads: usize,
    before: &Path,
    after: &Path,
    out: &Path,
) -> Result<()> {
    let report = compare_followup(read_stats(before)?, read_stats(after)?);
    print!("{}", report.render_table());
    let out = out_path(out);
    ensure_parent(&out)?;
    fs::write(&out, report.render_records())?;
    let mut record = RunRecord::new("compare", threads, true, config);
    record.add_artifact(&out)?;
    record.write(&record_path(&out))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommands_are_usage_errors() {
        assert_eq!(main_with_args(["calcseg", "frobnicate"]), EXIT_USAGE);
    }

    #[test]
    fn help_is_not_an_error() {
        assert_eq!(main_with_args(["calcseg", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_checkpoint_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.cseg");
        let image = dir.path().join("img.png");
        crate::data::synth::write_image_png16(&image, &Grid2::<f32>::new(8, 8)).unwrap();
        let code = main_with_args([
            "calcseg",
            "infer",
            "--checkpoint",
            missing.to_str().unwrap(),
            "--image",
            image.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_DATA);
    }

    #[test]
    fn bad_threshold_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let mask = dir.path().join("mask.png");
        crate::data::synth::write_mask_png8(&mask, &Grid2::<u8>::new(4, 4)).unwrap();
        let out = dir.path().join("stats.tsv");
        let code = main_with_args([
            "calcseg",
            "stats",
            "--input",
            mask.to_str().unwrap(),
            "--threshold",
            "1.5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}
