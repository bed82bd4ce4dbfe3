//! Versioned run configuration and the reproducibility record every
//! command writes next to its artifacts.
//!
//! A configuration file is plain TOML with one section per parameter set.
//! A run record is the same document nested under `[config]`, extended with
//! the subcommand, thread count, and artifact checksums, so a record can be
//! passed back as `--config` to reproduce the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::fnv1a64;
use crate::data::SyntheticParams;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Tiling and rendering parameters for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferParams {
    pub tile_size: usize,
    /// Context margin per tile; omitted means the minimal exact halo for
    /// the model, (receptive_field - 1) / 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub halo: Option<usize>,
    /// Error out on images smaller than the receptive field instead of
    /// zero-padding them.
    pub strict_size: bool,
    /// Heatmap transparency cutoff.
    pub display_threshold: f64,
    /// Spacing assumed for bare image inputs that carry no manifest record.
    pub pixel_spacing_mm: f64,
}

impl Default for InferParams {
    fn default() -> Self {
        Self {
            tile_size: 512,
            halo: None,
            strict_size: false,
            display_threshold: 0.1,
            pixel_spacing_mm: 0.1,
        }
    }
}

/// Split and threshold choices for evaluation and statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    /// Fraction of the manifest that belongs to the training side.
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Threshold sweep for the component-level detection curve.
    pub froc_thresholds: Vec<f64>,
    /// Default threshold when a probability map is binarized for
    /// statistics.
    pub binarize_threshold: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            split_seed: 0,
            froc_thresholds: (1..20).map(|i| f64::from(i) * 0.05).collect(),
            binarize_threshold: 0.5,
        }
    }
}

/// Everything a run needs, one section per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub synth: SyntheticParams,
    pub infer: InferParams,
    pub eval: EvalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            synth: SyntheticParams::default(),
            infer: InferParams::default(),
            eval: EvalParams::default(),
        }
    }
}

/// Reads a configuration file, accepting either a plain [`RunConfig`]
/// document or a run record (whose configuration lives under `[config]`).
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let fail = |message: String| Error::FileFormat {
        path: path.to_path_buf(),
        message,
    };
    let table: toml::Table = text.parse().map_err(|e| fail(format!("{e}")))?;
    let config_value = match table.get("config") {
        Some(nested) => nested.clone(),
        None => toml::Value::Table(table),
    };
    let config: RunConfig = config_value.try_into().map_err(|e| fail(format!("{e}")))?;
    if config.version != CONFIG_VERSION {
        return Err(fail(format!(
            "unsupported config version {}, expected {CONFIG_VERSION}",
            config.version
        )));
    }
    Ok(config)
}

/// The reproducibility record: the effective configuration (every default
/// and override resolved), the run's entry point, and checksums of what it
/// wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub version: u32,
    pub subcommand: String,
    /// Worker threads the run was pinned to; 0 means the library default.
    pub threads: usize,
    pub deterministic: bool,
    pub config: RunConfig,
    /// Artifact file name to checksum, `fnv1a64:<hex>`.
    pub artifacts: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(subcommand: &str, threads: usize, deterministic: bool, config: RunConfig) -> Self {
        Self {
            version: CONFIG_VERSION,
            subcommand: subcommand.to_string(),
            threads,
            deterministic,
            config,
            artifacts: BTreeMap::new(),
        }
    }

    /// Checksums the file and records it under its file name.
    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.artifacts.insert(name, artifact_checksum(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::FileFormat {
            path: path.to_path_buf(),
            message: format!("{e}"),
        })?;
        fs::write(path, text)?;
        Ok(())
    }
}

pub fn artifact_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("fnv1a64:{:016x}", fnv1a64(&bytes)))
}
