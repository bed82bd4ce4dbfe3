//! Synthetic mammogram generator.
//!
//! Produces images that exercise the pipeline the way screening mammograms
//! do: a smooth multi-scale tissue-like background with small bright
//! calcification-like bumps, some isolated and some in clusters, at a
//! positive-pixel fraction around one per thousand. Ground truth is defined
//! by construction: a pixel is positive exactly where a planted bump exceeds
//! half its peak amplitude, which for a Gaussian bump whose full width at
//! half maximum equals the blob diameter is a disk of that diameter.
//!
//! Everything is drawn from one seeded stream in a fixed order, so a given
//! `SyntheticParams` value always produces bit-identical pixels.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Grid2;

use super::{DatasetManifest, ManifestRecord, View};

/// Background intensity band after normalization; bumps rise above it.
const BACKGROUND_LO: f32 = 0.05;
const BACKGROUND_HI: f32 = 0.5;

/// Attempts to place a non-touching isolated blob before giving up and
/// accepting an overlap.
const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    /// Output images are `size x size` pixels.
    pub size: usize,
    /// Per-octave amplitudes of the background noise, coarsest first. The
    /// lattice cell starts at `base_cell` and halves each octave.
    pub octave_amplitudes: Vec<f64>,
    /// Lattice cell of the coarsest background octave, in pixels.
    pub base_cell: usize,
    /// Blobs planted on their own, re-rolled until they touch nothing else.
    pub num_isolated: usize,
    /// Cluster count; each cluster scatters a Poisson-distributed number of
    /// blobs inside a disk.
    pub num_clusters: usize,
    /// Disk radius for cluster scattering, in pixels.
    pub cluster_radius: f64,
    /// Mean blobs per cluster (Poisson).
    pub cluster_mean_blobs: f64,
    /// Blob diameter bounds in pixels, uniform. At 0.1 mm spacing the
    /// default 3-9 px covers calcifications from under half a millimeter up.
    pub blob_diameter_range: (f64, f64),
    /// Blob peak amplitude above the local background, uniform.
    pub blob_amplitude_range: (f64, f64),
    /// When set, extra isolated blobs are planted until the positive-pixel
    /// fraction reaches this floor (skipped when no blobs were requested).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_positive_fraction: Option<f64>,
    /// When set, a blob that would push the positive fraction over this
    /// ceiling is not planted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_positive_fraction: Option<f64>,
    /// Recorded in the manifest; synthetic pixels have no physical spacing.
    pub pixel_spacing_mm: f32,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            size: 512,
            octave_amplitudes: vec![1.0, 0.5, 0.25, 0.125],
            base_cell: 64,
            num_isolated: 4,
            num_clusters: 2,
            cluster_radius: 20.0,
            cluster_mean_blobs: 3.0,
            blob_diameter_range: (3.0, 9.0),
            blob_amplitude_range: (0.35, 0.75),
            min_positive_fraction: Some(1.0 / 2000.0),
            max_positive_fraction: Some(1.0 / 500.0),
            pixel_spacing_mm: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.size < 32 {
            return fail(format!("image size must be at least 32, got {}", self.size));
        }
        if self.octave_amplitudes.is_empty() {
            return fail("octave_amplitudes must not be empty".into());
        }
        if self.base_cell < 2 {
            return fail(format!("base_cell must be at least 2, got {}", self.base_cell));
        }
        let (dlo, dhi) = self.blob_diameter_range;
        if !(dlo > 0.0 && dlo <= dhi) || dhi > self.size as f64 / 4.0 {
            return fail(format!(
                "blob_diameter_range ({dlo}, {dhi}) must satisfy 0 < lo <= hi <= size/4"
            ));
        }
        let (alo, ahi) = self.blob_amplitude_range;
        if !(alo > 0.0 && alo <= ahi && ahi <= 1.0) {
            return fail(format!(
                "blob_amplitude_range ({alo}, {ahi}) must satisfy 0 < lo <= hi <= 1"
            ));
        }
        if self.num_clusters > 0 {
            if self.cluster_radius <= 0.0 {
                return fail("cluster_radius must be positive".into());
            }
            if 2.0 * self.cluster_radius + 16.0 > self.size as f64 {
                return fail(format!(
                    "cluster_radius {} does not fit a {}px image",
                    self.cluster_radius, self.size
                ));
            }
            if self.cluster_mean_blobs <= 0.0 {
                return fail("cluster_mean_blobs must be positive".into());
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_positive_fraction, self.max_positive_fraction) {
            if lo > hi {
                return fail(format!(
                    "min_positive_fraction {lo} exceeds max_positive_fraction {hi}"
                ));
            }
        }
        Ok(())
    }

    /// Expected positive-pixel fraction implied by the parameters, before
    /// any floor/ceiling enforcement: expected blob count times expected
    /// disk area over image area.
    pub fn expected_positive_fraction(&self) -> f64 {
        let (lo, hi) = self.blob_diameter_range;
        let mean_d_sq = (lo * lo + lo * hi + hi * hi) / 3.0;
        let mean_area = std::f64::consts::FRAC_PI_4 * mean_d_sq;
        let blobs =
            self.num_isolated as f64 + self.num_clusters as f64 * self.cluster_mean_blobs;
        blobs * mean_area / (self.size as f64 * self.size as f64)
    }
}

/// One generated image with its by-construction ground truth and a manifest
/// record (paths follow a `images/s<seed>.png` convention; the emitter
/// writes files to match).
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: Grid2<f32>,
    pub mask: Grid2<u8>,
    pub record: ManifestRecord,
}

/// A bump waiting to be planted.
#[derive(Debug, Clone, Copy)]
struct Blob {
    cy: f64,
    cx: f64,
    diameter: f64,
    amplitude: f64,
}

pub fn generate_synthetic(params: &SyntheticParams) -> Result<SyntheticSample> {
    params.validate()?;

    let expected = params.expected_positive_fraction();
    if (params.num_isolated > 0 || params.num_clusters > 0)
        && !(1.0 / 5000.0..=1.0 / 100.0).contains(&expected)
    {
        log::warn!(
            "expected positive fraction {expected:.6} is outside [1/5000, 1/100]; \
             the class balance will not resemble screening data"
        );
    }

    let size = params.size;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut image = background(params, &mut rng);
    let mut mask = Grid2::<u8>::new(size, size);

    let total = (size * size) as f64;
    let max_count = params
        .max_positive_fraction
        .map(|f| (f * total).floor() as usize);
    let min_count = params
        .min_positive_fraction
        .map(|f| (f * total).ceil() as usize);
    let any_blobs = params.num_isolated > 0 || params.num_clusters > 0;
    let mut positive = 0usize;

    // Isolated blobs: re-rolled until they touch no existing foreground.
    for _ in 0..params.num_isolated {
        positive += plant_isolated(params, &mut rng, &mut image, &mut mask, positive, max_count);
    }

    // Clusters: a Poisson number of blobs scattered uniformly in a disk;
    // these are allowed to overlap each other.
    for _ in 0..params.num_clusters {
        let margin = params.cluster_radius + 8.0;
        let cy = rng.gen::<f64>() * (size as f64 - 2.0 * margin) + margin;
        let cx = rng.gen::<f64>() * (size as f64 - 2.0 * margin) + margin;
        let count = poisson(&mut rng, params.cluster_mean_blobs);
        for _ in 0..count {
            let r = params.cluster_radius * rng.gen::<f64>().sqrt();
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let blob = Blob {
                cy: (cy + r * theta.sin()).clamp(2.0, size as f64 - 3.0),
                cx: (cx + r * theta.cos()).clamp(2.0, size as f64 - 3.0),
                diameter: draw_range(&mut rng, params.blob_diameter_range),
                amplitude: draw_range(&mut rng, params.blob_amplitude_range),
            };
            positive += plant(&blob, &mut image, &mut mask, positive, max_count);
        }
    }

    // Floor enforcement: keep planting isolated blobs until the positive
    // fraction reaches the configured minimum. Skipped when the caller asked
    // for an empty mask.
    if let Some(min_count) = min_count.filter(|_| any_blobs) {
        let mut attempts = 0;
        while positive < min_count && attempts < 10_000 {
            let before = positive;
            positive +=
                plant_isolated(params, &mut rng, &mut image, &mut mask, positive, max_count);
            if positive == before {
                // Ceiling reached; planting more cannot help.
                break;
            }
            attempts += 1;
        }
        if positive < min_count {
            log::warn!(
                "positive fraction floor not reachable: {positive} of {min_count} pixels planted"
            );
        }
    }

    for v in image.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    Ok(SyntheticSample {
        record: record_for_seed(params),
        image,
        mask,
    })
}

/// Draws an isolated blob, re-rolling its position until its mask disk
/// touches no existing foreground (8-connectivity), then plants it. Returns
/// the number of new positive pixels (0 if the ceiling blocked it).
fn plant_isolated(
    params: &SyntheticParams,
    rng: &mut ChaCha8Rng,
    image: &mut Grid2<f32>,
    mask: &mut Grid2<u8>,
    positive: usize,
    max_count: Option<usize>,
) -> usize {
    let size = params.size as f64;
    let diameter = draw_range(rng, params.blob_diameter_range);
    let amplitude = draw_range(rng, params.blob_amplitude_range);
    let margin = diameter / 2.0 + 2.0;
    let mut blob = Blob {
        cy: 0.0,
        cx: 0.0,
        diameter,
        amplitude,
    };
    for attempt in 0..PLACEMENT_ATTEMPTS {
        blob.cy = rng.gen::<f64>() * (size - 2.0 * margin) + margin;
        blob.cx = rng.gen::<f64>() * (size - 2.0 * margin) + margin;
        if attempt + 1 == PLACEMENT_ATTEMPTS {
            log::warn!("no non-touching position found for an isolated blob; accepting overlap");
            break;
        }
        if !touches_foreground(&blob, mask) {
            break;
        }
    }
    plant(&blob, image, mask, positive, max_count)
}

/// Adds the blob's Gaussian bump to the image and its half-peak disk to the
/// mask, unless doing so would exceed `max_count` positive pixels (then the
/// blob is dropped entirely). Returns the number of new positive pixels.
fn plant(
    blob: &Blob,
    image: &mut Grid2<f32>,
    mask: &mut Grid2<u8>,
    positive: usize,
    max_count: Option<usize>,
) -> usize {
    let disk = mask_pixels(blob, mask.height(), mask.width());
    let new: usize = disk.iter().filter(|&&(y, x)| mask.get(y, x) == 0).count();
    if let Some(cap) = max_count {
        if positive + new > cap {
            return 0;
        }
    }
    add_bump(blob, image);
    for &(y, x) in &disk {
        mask.set(y, x, 1);
    }
    new
}

/// Pixels where the bump exceeds half its peak: since the full width at half
/// maximum is the diameter, this is the disk of radius `diameter / 2`.
fn mask_pixels(blob: &Blob, height: usize, width: usize) -> Vec<(usize, usize)> {
    let sigma = blob.diameter / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let half = blob.amplitude / 2.0;
    let reach = (blob.diameter / 2.0).ceil() as i64 + 1;
    let (cy, cx) = (blob.cy, blob.cx);
    let mut out = Vec::new();
    for y in ((cy as i64) - reach).max(0)..=((cy as i64) + reach).min(height as i64 - 1) {
        for x in ((cx as i64) - reach).max(0)..=((cx as i64) + reach).min(width as i64 - 1) {
            let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let value = blob.amplitude * (-r2 / (2.0 * sigma * sigma)).exp();
            if value > half {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

fn add_bump(blob: &Blob, image: &mut Grid2<f32>) {
    let sigma = blob.diameter / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let reach = (3.5 * sigma).ceil() as i64;
    let (h, w) = (image.height() as i64, image.width() as i64);
    let (cy, cx) = (blob.cy, blob.cx);
    for y in ((cy as i64) - reach).max(0)..=((cy as i64) + reach).min(h - 1) {
        for x in ((cx as i64) - reach).max(0)..=((cx as i64) + reach).min(w - 1) {
            let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let value = blob.amplitude * (-r2 / (2.0 * sigma * sigma)).exp();
            let old = image.get(y as usize, x as usize);
            image.set(y as usize, x as usize, old + value as f32);
        }
    }
}

/// True when the blob's disk would land on or next to (8-neighborhood) any
/// already-set mask pixel.
fn touches_foreground(blob: &Blob, mask: &Grid2<u8>) -> bool {
    let reach = blob.diameter / 2.0 + 1.5;
    let y0 = ((blob.cy - reach).floor().max(0.0)) as usize;
    let x0 = ((blob.cx - reach).floor().max(0.0)) as usize;
    let y1 = ((blob.cy + reach).ceil() as usize).min(mask.height() - 1);
    let x1 = ((blob.cx + reach).ceil() as usize).min(mask.width() - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if mask.get(y, x) != 0 {
                return true;
            }
        }
    }
    false
}

/// Multi-octave value noise: one seeded lattice per octave, bilinearly
/// upsampled, summed with the configured amplitudes, then normalized into
/// the background intensity band.
fn background(params: &SyntheticParams, rng: &mut ChaCha8Rng) -> Grid2<f32> {
    let size = params.size;
    let mut sum = vec![0.0f64; size * size];
    for (octave, &amplitude) in params.octave_amplitudes.iter().enumerate() {
        let cell = (params.base_cell >> octave).max(2);
        let lattice = size / cell + 2;
        let values: Vec<f64> = (0..lattice * lattice).map(|_| rng.gen::<f64>()).collect();
        for y in 0..size {
            let gy = y / cell;
            let ty = (y % cell) as f64 / cell as f64;
            for x in 0..size {
                let gx = x / cell;
                let tx = (x % cell) as f64 / cell as f64;
                let v00 = values[gy * lattice + gx];
                let v01 = values[gy * lattice + gx + 1];
                let v10 = values[(gy + 1) * lattice + gx];
                let v11 = values[(gy + 1) * lattice + gx + 1];
                let top = v00 * (1.0 - tx) + v01 * tx;
                let bottom = v10 * (1.0 - tx) + v11 * tx;
                sum[y * size + x] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &sum {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let scale = if hi > lo {
        f64::from(BACKGROUND_HI - BACKGROUND_LO) / (hi - lo)
    } else {
        0.0
    };
    let data = sum
        .into_iter()
        .map(|v| (f64::from(BACKGROUND_LO) + (v - lo) * scale) as f32)
        .collect();
    Grid2::from_vec(size, size, data).expect("buffer length matches by construction")
}

fn draw_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen::<f64>() * (hi - lo) + lo
}

/// Knuth's inversion sampling; fine for the small means used here.
fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    let l = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= l || k > 10_000 {
            return k;
        }
        k += 1;
    }
}

fn record_for_seed(params: &SyntheticParams) -> ManifestRecord {
    let seed = params.seed;
    ManifestRecord {
        image: PathBuf::from(format!("images/s{seed:08}.png")),
        mask: PathBuf::from(format!("masks/s{seed:08}.png")),
        patient_id: format!("SYN-{:06}", seed / 4),
        date: format!("2024-{:02}-{:02}", 1 + seed % 12, 1 + (seed / 12) % 28),
        view: if seed % 2 == 0 { View::CC } else { View::MLO },
        pixel_spacing_mm: params.pixel_spacing_mm,
        width: params.size,
        height: params.size,
    }
}

/// Generates `count` samples (seeds `params.seed`, `params.seed + 1`, ...)
/// and writes them under `dir` as 16-bit image PNGs, 8-bit mask PNGs, and a
/// `manifest.tsv`. Returns the manifest path.
pub fn emit_dataset(
    dir: &Path,
    params: &SyntheticParams,
    count: usize,
    dataset_tag: &str,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let sample_params = SyntheticParams {
            seed: params.seed.wrapping_add(i as u64),
            ..params.clone()
        };
        let sample = generate_synthetic(&sample_params)?;
        write_image_png16(&dir.join(&sample.record.image), &sample.image)?;
        write_mask_png8(&dir.join(&sample.record.mask), &sample.mask)?;
        records.push(sample.record);
    }
    let manifest_path = dir.join("manifest.tsv");
    DatasetManifest::new(dataset_tag, dir, records).write(&manifest_path)?;
    Ok(manifest_path)
}

/// Writes `[0, 1]` values as a 16-bit grayscale PNG.
pub fn write_image_png16(path: &Path, image: &Grid2<f32>) -> Result<()> {
    let data: Vec<u16> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        image.width() as u32,
        image.height() as u32,
        data,
    )
    .expect("buffer length matches by construction");
    buf.save(path)?;
    Ok(())
}

/// Writes a binary mask as an 8-bit PNG (foreground 255 for visibility).
pub fn write_mask_png8(path: &Path, mask: &Grid2<u8>) -> Result<()> {
    let data: Vec<u8> = mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data)
        .expect("buffer length matches by construction");
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_params() -> SyntheticParams {
        SyntheticParams {
            size: 128,
            num_isolated: 3,
            num_clusters: 1,
            cluster_radius: 12.0,
            min_positive_fraction: None,
            max_positive_fraction: None,
            ..SyntheticParams::default()
        }
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let params = quick_params();
        let a = generate_synthetic(&params).unwrap();
        let b = generate_synthetic(&params).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.mask.data(), b.mask.data());

        let c = generate_synthetic(&SyntheticParams {
            seed: 1,
            ..params
        })
        .unwrap();
        assert_ne!(a.image.data(), c.image.data());
    }

    #[test]
    fn no_blobs_means_an_empty_mask() {
        let params = SyntheticParams {
            num_isolated: 0,
            num_clusters: 0,
            ..quick_params()
        };
        let sample = generate_synthetic(&params).unwrap();
        assert_eq!(sample.mask.count_nonzero(), 0);
    }

    #[test]
    fn mask_is_the_half_peak_disk() {
        // One isolated blob; every mask pixel must lie strictly inside the
        // blob radius and every non-mask pixel at or beyond it.
        let params = SyntheticParams {
            num_isolated: 1,
            num_clusters: 0,
            blob_diameter_range: (7.0, 7.0),
            ..quick_params()
        };
        let sample = generate_synthetic(&params).unwrap();
        let pixels: Vec<(usize, usize)> = (0..params.size)
            .flat_map(|y| (0..params.size).map(move |x| (y, x)))
            .filter(|&(y, x)| sample.mask.get(y, x) != 0)
            .collect();
        assert!(!pixels.is_empty());
        let cy = pixels.iter().map(|&(y, _)| y as f64).sum::<f64>() / pixels.len() as f64;
        let cx = pixels.iter().map(|&(_, x)| x as f64).sum::<f64>() / pixels.len() as f64;
        for (y, x) in &pixels {
            let r = ((*y as f64 - cy).powi(2) + (*x as f64 - cx).powi(2)).sqrt();
            assert!(r < 3.5 + 1.0, "mask pixel ({y},{x}) is {r:.2}px from center");
        }
        // Area close to the d=7 disk.
        let area = pixels.len() as f64;
        let expected = std::f64::consts::FRAC_PI_4 * 49.0;
        assert!((area - expected).abs() <= 10.0, "area {area} vs {expected}");
    }

    #[test]
    fn default_expected_fraction_sits_in_the_screening_band() {
        let expected = SyntheticParams::default().expected_positive_fraction();
        assert!(
            (1.0 / 2000.0..=1.0 / 500.0).contains(&expected),
            "expected fraction {expected}"
        );
    }

    #[test]
    fn floor_enforcement_tops_up_sparse_masks() {
        let params = SyntheticParams {
            num_isolated: 1,
            num_clusters: 0,
            blob_diameter_range: (3.0, 3.0),
            min_positive_fraction: Some(1.0 / 2000.0),
            max_positive_fraction: Some(1.0 / 500.0),
            ..quick_params()
        };
        let sample = generate_synthetic(&params).unwrap();
        let fraction = sample.mask.count_nonzero() as f64 / (128.0 * 128.0);
        assert!(fraction >= 1.0 / 2000.0, "fraction {fraction}");
        assert!(fraction <= 1.0 / 500.0, "fraction {fraction}");
    }

    #[test]
    fn ceiling_enforcement_caps_dense_masks() {
        let params = SyntheticParams {
            num_isolated: 40,
            num_clusters: 0,
            blob_diameter_range: (9.0, 9.0),
            min_positive_fraction: None,
            max_positive_fraction: Some(1.0 / 500.0),
            ..quick_params()
        };
        let sample = generate_synthetic(&params).unwrap();
        let fraction = sample.mask.count_nonzero() as f64 / (128.0 * 128.0);
        assert!(fraction <= 1.0 / 500.0, "fraction {fraction}");
    }

    #[test]
    fn image_values_stay_in_unit_range() {
        let sample = generate_synthetic(&SyntheticParams {
            blob_amplitude_range: (0.9, 1.0),
            ..quick_params()
        })
        .unwrap();
        assert!(sample
            .image
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }
}
