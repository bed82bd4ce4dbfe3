//! Dataset manifests, image/mask loading, and train/test splitting.
//!
//! A dataset is described by a line-oriented manifest file:
//!
//! ```text
//! #calcseg-manifest v1 dataset=synth-v1
//! image	mask	patient_id	date	view	pixel_spacing_mm	width	height
//! images/s0001.png	masks/s0001.png	P0001	2024-03-05	CC	0.1	512	512
//! ```
//!
//! The first line carries the format version and the dataset tag (models are
//! dataset-specific, so the tag follows them into checkpoints). The second
//! line names the columns; every further line is one tab-separated record
//! with image and mask paths relative to the manifest's directory.

pub mod synth;

pub use synth::{emit_dataset, generate_synthetic, SyntheticParams, SyntheticSample};

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Grid2;

const MANIFEST_HEADER_PREFIX: &str = "#calcseg-manifest v1 dataset=";
const MANIFEST_COLUMNS: &str = "image\tmask\tpatient_id\tdate\tview\tpixel_spacing_mm\twidth\theight";

/// Mammographic projection of one exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// Craniocaudal.
    CC,
    /// Mediolateral oblique.
    MLO,
}

impl FromStr for View {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "CC" => Ok(View::CC),
            "MLO" => Ok(View::MLO),
            other => Err(format!("unknown view {other:?} (expected CC or MLO)")),
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::CC => "CC",
            View::MLO => "MLO",
        })
    }
}

/// One manifest line: an image, its label mask, and acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// Image path, relative to the manifest's directory.
    pub image: PathBuf,
    /// Mask path, relative to the manifest's directory.
    pub mask: PathBuf,
    pub patient_id: String,
    /// Acquisition date, `YYYY-MM-DD`.
    pub date: String,
    pub view: View,
    pub pixel_spacing_mm: f32,
    pub width: usize,
    pub height: usize,
}

impl ManifestRecord {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.image.display(),
            self.mask.display(),
            self.patient_id,
            self.date,
            self.view,
            self.pixel_spacing_mm,
            self.width,
            self.height
        )
    }

    fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(format!("expected 8 tab-separated fields, got {}", fields.len()));
        }
        Ok(ManifestRecord {
            image: PathBuf::from(fields[0]),
            mask: PathBuf::from(fields[1]),
            patient_id: fields[2].to_string(),
            date: fields[3].to_string(),
            view: fields[4].parse()?,
            pixel_spacing_mm: fields[5]
                .parse()
                .map_err(|_| format!("bad pixel_spacing_mm {:?}", fields[5]))?,
            width: fields[6]
                .parse()
                .map_err(|_| format!("bad width {:?}", fields[6]))?,
            height: fields[7]
                .parse()
                .map_err(|_| format!("bad height {:?}", fields[7]))?,
        })
    }
}

/// Parsed manifest: dataset tag plus records, with the manifest's directory
/// remembered for resolving relative paths.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub dataset_tag: String,
    pub records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_tag: &str, base_dir: &Path, records: Vec<ManifestRecord>) -> Self {
        Self {
            dataset_tag: dataset_tag.to_string(),
            records,
            base_dir: base_dir.to_path_buf(),
        }
    }

    /// Directory that record paths are relative to.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let err_at = |line: usize, message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();

        let (_, first) = lines
            .next()
            .ok_or_else(|| err_at(1, "empty file; expected a #calcseg-manifest header".into()))?;
        let dataset_tag = first
            .strip_prefix(MANIFEST_HEADER_PREFIX)
            .ok_or_else(|| {
                err_at(
                    1,
                    format!("expected {MANIFEST_HEADER_PREFIX:?}<tag>, got {first:?}"),
                )
            })?
            .to_string();
        if dataset_tag.is_empty() {
            return Err(err_at(1, "dataset tag is empty".into()));
        }

        let (_, columns) = lines
            .next()
            .ok_or_else(|| err_at(2, "missing column header line".into()))?;
        if columns != MANIFEST_COLUMNS {
            return Err(err_at(
                2,
                format!("column header must be {MANIFEST_COLUMNS:?}, got {columns:?}"),
            ));
        }

        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let record =
                ManifestRecord::parse_line(line).map_err(|m| err_at(idx + 1, m))?;
            records.push(record);
        }
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self {
            dataset_tag,
            records,
            base_dir,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        writeln!(file, "{MANIFEST_HEADER_PREFIX}{}", self.dataset_tag)?;
        writeln!(file, "{MANIFEST_COLUMNS}")?;
        for record in &self.records {
            writeln!(file, "{}", record.to_line())?;
        }
        Ok(())
    }
}

/// One loaded sample: image normalized to `[0, 1]`, binary mask, and the
/// manifest record it came from.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Grid2<f32>,
    pub mask: Grid2<u8>,
    pub record: ManifestRecord,
}

/// A validated dataset: every record's files exist and match their declared
/// dimensions. Pixels are loaded lazily per sample (mammograms are large).
#[derive(Debug, Clone)]
pub struct Dataset {
    tag: String,
    base_dir: PathBuf,
    records: Vec<ManifestRecord>,
}

/// How [`load_dataset`] reacts to a record that fails validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// First bad record fails the whole load.
    FailFast,
    /// Bad records are dropped and reported; the rest load normally.
    SkipWithReport,
}

/// Records dropped by [`ValidationMode::SkipWithReport`], with the reasons.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub skipped: Vec<(ManifestRecord, Error)>,
}

/// Reads a manifest and validates every record: referenced files must exist
/// and the image's actual dimensions must match the declared width/height.
pub fn load_dataset(manifest_path: &Path, mode: ValidationMode) -> Result<(Dataset, LoadReport)> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let mut report = LoadReport::default();
    let mut records = Vec::with_capacity(manifest.records.len());
    for record in manifest.records {
        match validate_record(&manifest.base_dir, &record) {
            Ok(()) => records.push(record),
            Err(e) => match mode {
                ValidationMode::FailFast => return Err(e),
                ValidationMode::SkipWithReport => report.skipped.push((record, e)),
            },
        }
    }
    Ok((
        Dataset {
            tag: manifest.dataset_tag,
            base_dir: manifest.base_dir,
            records,
        },
        report,
    ))
}

fn validate_record(base_dir: &Path, record: &ManifestRecord) -> Result<()> {
    let fail = |message: String| Error::Record {
        record: record.image.display().to_string(),
        message,
    };
    for path in [&record.image, &record.mask] {
        let full = base_dir.join(path);
        if !full.is_file() {
            return Err(fail(format!("file {} does not exist", full.display())));
        }
        let (w, h) = image::image_dimensions(&full).map_err(|e| {
            fail(format!("cannot read dimensions of {}: {e}", full.display()))
        })?;
        if (w as usize, h as usize) != (record.width, record.height) {
            return Err(fail(format!(
                "{} is {w}x{h}, manifest declares {}x{}",
                full.display(),
                record.width,
                record.height
            )));
        }
    }
    Ok(())
}

impl Dataset {
    /// Builds a dataset directly from in-memory parts (used by tests and the
    /// synthetic emitter). No validation is performed.
    pub fn from_parts(tag: &str, base_dir: &Path, records: Vec<ManifestRecord>) -> Self {
        Self {
            tag: tag.to_string(),
            base_dir: base_dir.to_path_buf(),
            records,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Loads one sample's pixels: the image min-max normalized to `[0, 1]`,
    /// the mask binarized (any nonzero value is foreground).
    pub fn load_sample(&self, index: usize) -> Result<Sample> {
        let record = self.records[index].clone();
        let image = load_image_normalized(&self.base_dir.join(&record.image))?;
        let mask = load_mask(&self.base_dir.join(&record.mask))?;
        Ok(Sample {
            image,
            mask,
            record,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }

    /// Deterministic random split: shuffles records by `seed`, takes
    /// `floor(n * train_fraction)` for training, the rest for test. The two
    /// parts are disjoint and cover the dataset.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let mut indices: Vec<usize> = (0..self.records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let n_train = (self.records.len() as f64 * train_fraction).floor() as usize;
        if n_train == 0 || n_train == self.records.len() {
            log::warn!(
                "split of {} samples at {train_fraction} leaves one side empty",
                self.records.len()
            );
        }
        let pick = |ids: &[usize]| Dataset {
            tag: self.tag.clone(),
            base_dir: self.base_dir.clone(),
            records: ids.iter().map(|&i| self.records[i].clone()).collect(),
        };
        Ok((pick(&indices[..n_train]), pick(&indices[n_train..])))
    }
}

/// Loads a grayscale image (8- or 16-bit) and min-max normalizes it to
/// `[0, 1]`. A constant image maps to all zeros.
pub fn load_image_normalized(path: &Path) -> Result<Grid2<f32>> {
    let raw = load_image_raw(path)?;
    let (min, max) = raw
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let scale = if max > min { 1.0 / (max - min) } else { 0.0 };
    let mut out = raw;
    for v in out.data_mut() {
        *v = (*v - min) * scale;
    }
    Ok(out)
}

/// Loads a grayscale image as raw sample values (`u8` 0-255 or `u16`
/// 0-65535, as stored).
pub fn load_image_raw(path: &Path) -> Result<Grid2<f32>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().map(f32::from).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(f32::from).collect()
        }
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(f32::from)
            .collect(),
    };
    Grid2::from_vec(h, w, data)
}

/// Loads a mask image; any nonzero pixel is foreground (1).
pub fn load_mask(path: &Path) -> Result<Grid2<u8>> {
    let raw = load_image_raw(path)?;
    let (h, w) = (raw.height(), raw.width());
    let data = raw
        .into_data()
        .into_iter()
        .map(|v| u8::from(v != 0.0))
        .collect();
    Grid2::from_vec(h, w, data)
}
