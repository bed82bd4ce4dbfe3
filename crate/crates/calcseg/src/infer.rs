//! Full-resolution inference by overlap tiling.
//!
//! Arbitrarily large images are processed tile by tile. Each tile is cut
//! with a halo of surrounding context at least as wide as half the receptive
//! field, so every pixel of the tile interior sees exactly the context it
//! would see in a whole-image forward pass. Only interiors are written to
//! the output, which therefore matches a single pass bit for bit while peak
//! memory stays proportional to the tile area, not the image area.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{sigmoid, Grid2};

/// Per-pixel calcification probabilities for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    probs: Grid2<f32>,
    pub pixel_spacing_mm: f32,
    pub source_id: String,
}

impl ProbabilityMap {
    pub fn new(probs: Grid2<f32>, pixel_spacing_mm: f32, source_id: impl Into<String>) -> Self {
        Self {
            probs,
            pixel_spacing_mm,
            source_id: source_id.into(),
        }
    }

    pub fn grid(&self) -> &Grid2<f32> {
        &self.probs
    }

    pub fn height(&self) -> usize {
        self.probs.height()
    }

    pub fn width(&self) -> usize {
        self.probs.width()
    }

    /// Binarizes at `threshold`: probability >= threshold becomes foreground.
    pub fn binarize(&self, threshold: f32) -> Grid2<u8> {
        let mut mask = Grid2::<u8>::new(self.height(), self.width());
        for (dst, &p) in mask.data_mut().iter_mut().zip(self.probs.data()) {
            *dst = u8::from(p >= threshold);
        }
        mask
    }
}

/// How to tile an image, and what to do with images smaller than the
/// receptive field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileSpec {
    /// Interior edge length of each tile.
    pub tile_size: usize,
    /// Context margin around each tile interior; must be at least half the
    /// receptive field (rounded down) for tiling to be exact.
    pub halo: usize,
    /// When true, images smaller than the receptive field are an error;
    /// otherwise they are zero-padded up to it with a warning.
    pub strict: bool,
}

impl TileSpec {
    /// Default tiling for a model: 512-pixel tiles with the minimal exact
    /// halo of (receptive_field - 1) / 2.
    pub fn for_model<T: crate::tensor::Scalar>(model: &Model<T>) -> Self {
        Self {
            tile_size: 512,
            halo: (model.receptive_field() - 1) / 2,
            strict: false,
        }
    }

    fn validate(&self, receptive_field: usize) -> Result<()> {
        let min_halo = (receptive_field - 1) / 2;
        if self.halo < min_halo {
            return Err(Error::InvalidArgument(format!(
                "halo {} is below the minimum {min_halo} for receptive field {receptive_field}",
                self.halo
            )));
        }
        if self.tile_size <= 2 * self.halo {
            return Err(Error::InvalidArgument(format!(
                "tile_size {} must exceed twice the halo {}",
                self.tile_size, self.halo
            )));
        }
        Ok(())
    }
}

/// Runs the model over the whole image in overlapping tiles and returns the
/// stitched probability map. The result is identical to
/// [`predict_single_pass`] because each tile carries enough context that the
/// network's zero padding only ever falls on true image borders.
pub fn predict_full(
    model: &Model<f32>,
    image: &Grid2<f32>,
    spec: &TileSpec,
    pixel_spacing_mm: f32,
    source_id: &str,
) -> Result<ProbabilityMap> {
    let rf = model.receptive_field();
    spec.validate(rf)?;
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if h < rf || w < rf {
        if spec.strict {
            return Err(Error::ImageTooSmall {
                height: h,
                width: w,
                receptive_field: rf,
            });
        }
        log::warn!(
            "image {h}x{w} is smaller than the receptive field {rf}; zero-padding for inference"
        );
        let mut padded = Grid2::<f32>::new(h.max(rf), w.max(rf));
        for y in 0..h {
            for x in 0..w {
                padded.set(y, x, image.get(y, x));
            }
        }
        let full = predict_full(model, &padded, spec, pixel_spacing_mm, source_id)?;
        return Ok(ProbabilityMap::new(
            full.grid().crop(0, 0, h, w),
            pixel_spacing_mm,
            source_id,
        ));
    }

    let mut probs = Grid2::<f32>::new(h, w);
    let mut y0 = 0;
    while y0 < h {
        let ih = spec.tile_size.min(h - y0);
        let cy0 = y0.saturating_sub(spec.halo);
        let cy1 = (y0 + ih + spec.halo).min(h);
        let mut x0 = 0;
        while x0 < w {
            let iw = spec.tile_size.min(w - x0);
            let cx0 = x0.saturating_sub(spec.halo);
            let cx1 = (x0 + iw + spec.halo).min(w);
            let context = image.crop(cy0, cx0, cy1 - cy0, cx1 - cx0);
            let tile_probs = predict_single_pass(model, &context)?;
            for dy in 0..ih {
                let src = tile_probs.row(y0 - cy0 + dy);
                let dst = probs.row_mut(y0 + dy);
                dst[x0..x0 + iw].copy_from_slice(&src[x0 - cx0..x0 - cx0 + iw]);
            }
            x0 += iw;
        }
        y0 += ih;
    }
    Ok(ProbabilityMap::new(probs, pixel_spacing_mm, source_id))
}

/// Whole-image forward pass followed by a sigmoid; the reference
/// [`predict_full`] must reproduce.
pub fn predict_single_pass(model: &Model<f32>, image: &Grid2<f32>) -> Result<Grid2<f32>> {
    let logits = model.forward(&image.to_tensor())?;
    let data: Vec<f32> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    Grid2::from_vec(image.height(), image.width(), data)
}

const MAP_MAGIC: &[u8; 4] = b"CMAP";
const MAP_VERSION: u8 = 1;

/// Writes the map in the probability-map file format: magic `CMAP`, a
/// version byte, height and width as little-endian u32, the pixel spacing as
/// a little-endian f32, then the row-major f32 payload.
pub fn save_probability_map(path: &Path, map: &ProbabilityMap) -> Result<()> {
    let mut bytes =
        Vec::with_capacity(4 + 1 + 4 + 4 + 4 + map.probs.len() * std::mem::size_of::<f32>());
    bytes.extend_from_slice(MAP_MAGIC);
    bytes.push(MAP_VERSION);
    bytes.extend_from_slice(&u32::try_from(map.height()).unwrap().to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(map.width()).unwrap().to_le_bytes());
    bytes.extend_from_slice(&map.pixel_spacing_mm.to_le_bytes());
    for &p in map.probs.data() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a probability-map file; the source id is taken from the file stem.
pub fn load_probability_map(path: &Path) -> Result<ProbabilityMap> {
    let bytes = fs::read(path)?;
    let fail = |message: String| Error::FileFormat {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 13 {
        return Err(fail(format!("{} bytes is too short for a header", bytes.len())));
    }
    if &bytes[0..4] != MAP_MAGIC {
        return Err(fail("bad magic, not a probability-map file".into()));
    }
    if bytes[4] != MAP_VERSION {
        return Err(fail(format!(
            "unsupported version {}, expected {MAP_VERSION}",
            bytes[4]
        )));
    }
    let height = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let spacing = f32::from_le_bytes(bytes[13..17].try_into().unwrap());
    let expected = 17 + height * width * std::mem::size_of::<f32>();
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload for {height}x{width} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(fail(format!("pixel spacing {spacing} is not positive")));
    }
    let mut data = Vec::with_capacity(height * width);
    for chunk in bytes[17..].chunks_exact(4) {
        let p = f32::from_le_bytes(chunk.try_into().unwrap());
        if !(0.0..=1.0).contains(&p) {
            return Err(fail(format!("probability {p} outside [0, 1]")));
        }
        data.push(p);
    }
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ProbabilityMap::new(
        Grid2::from_vec(height, width, data)?,
        spacing,
        source_id,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;

    fn tiny_model(seed: u64) -> Model<f32> {
        Model::build(
            ArchConfig {
                num_blocks: 2,
                branch_kernels: vec![1, 3],
                branch_width: 2,
                final_kernel: 3,
                input_channels: 1,
            },
            seed,
        )
        .unwrap()
    }

    fn noise_image(h: usize, w: usize) -> Grid2<f32> {
        let data = (0..h * w)
            .map(|i| ((i * 2654435761) % 1000) as f32 / 1000.0)
            .collect();
        Grid2::from_vec(h, w, data).unwrap()
    }

    #[test]
    fn tiled_equals_single_pass_bitwise() {
        let model = tiny_model(11);
        let image = noise_image(40, 57);
        let single = predict_single_pass(&model, &image).unwrap();
        for (tile, halo) in [(13, 3), (16, 5), (64, 3)] {
            let spec = TileSpec {
                tile_size: tile,
                halo,
                strict: true,
            };
            let tiled = predict_full(&model, &image, &spec, 0.1, "t").unwrap();
            assert_eq!(tiled.grid().data(), single.data(), "tile {tile} halo {halo}");
        }
    }

    #[test]
    fn constant_model_emits_sigmoid_of_bias() {
        let config = ArchConfig {
            num_blocks: 1,
            branch_kernels: vec![1, 3],
            branch_width: 2,
            final_kernel: 3,
            input_channels: 1,
        };
        let mut model = Model::<f32>::build(config, 0).unwrap();
        let n = model.flatten_parameters().len();
        let mut params = vec![0.0f32; n];
        *params.last_mut().unwrap() = 0.3;
        model.load_parameters(&params).unwrap();

        let image = noise_image(20, 20);
        let spec = TileSpec {
            tile_size: 8,
            halo: 2,
            strict: true,
        };
        let map = predict_full(&model, &image, &spec, 0.1, "t").unwrap();
        let expected = 1.0 / (1.0 + (-0.3f32).exp());
        assert!(map.grid().data().iter().all(|&p| (p - expected).abs() < 1e-6));
    }

    #[test]
    fn halo_below_half_receptive_field_is_rejected() {
        let model = tiny_model(0);
        assert_eq!(model.receptive_field(), 7);
        let image = noise_image(16, 16);
        let spec = TileSpec {
            tile_size: 8,
            halo: 2,
            strict: true,
        };
        assert!(predict_full(&model, &image, &spec, 0.1, "t").is_err());
    }

    #[test]
    fn small_image_errors_in_strict_mode_and_pads_otherwise() {
        let model = tiny_model(3);
        let image = noise_image(5, 9);
        let strict = TileSpec {
            tile_size: 32,
            halo: 3,
            strict: true,
        };
        assert!(matches!(
            predict_full(&model, &image, &strict, 0.1, "t"),
            Err(Error::ImageTooSmall { .. })
        ));

        let lenient = TileSpec {
            strict: false,
            ..strict
        };
        let map = predict_full(&model, &image, &lenient, 0.1, "t").unwrap();
        assert_eq!((map.height(), map.width()), (5, 9));

        let mut padded = Grid2::<f32>::new(7, 9);
        for y in 0..5 {
            for x in 0..9 {
                padded.set(y, x, image.get(y, x));
            }
        }
        let oracle = predict_single_pass(&model, &padded).unwrap();
        for y in 0..5 {
            for x in 0..9 {
                assert_eq!(map.grid().get(y, x), oracle.get(y, x));
            }
        }
    }

    #[test]
    fn map_file_round_trips() {
        let grid = Grid2::from_vec(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        let map = ProbabilityMap::new(grid, 0.1, "sample");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.cmap");
        save_probability_map(&path, &map).unwrap();
        let reread = load_probability_map(&path).unwrap();
        assert_eq!(reread, map);
    }

    #[test]
    fn corrupt_map_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cmap");

        fs::write(&path, b"JUNKJUNKJUNKJUNK").unwrap();
        let err = load_probability_map(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let grid = Grid2::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        save_probability_map(&path, &ProbabilityMap::new(grid, 0.1, "x")).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] = 0xff;
        fs::write(&path, &bytes).unwrap();
        let err = load_probability_map(&path).unwrap_err().to_string();
        assert!(err.contains("[0, 1]"), "{err}");
    }

    #[test]
    fn binarize_thresholds_inclusively() {
        let grid = Grid2::from_vec(1, 4, vec![0.1, 0.5, 0.49, 0.9]).unwrap();
        let map = ProbabilityMap::new(grid, 0.1, "t");
        let mask = map.binarize(0.5);
        assert_eq!(mask.data(), &[0, 1, 0, 1]);
    }
}
