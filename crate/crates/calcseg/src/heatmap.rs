//! Heatmap rendering of probability maps over the source mammogram.
//!
//! Probabilities map through a fixed 256-entry blue-to-red lookup table and
//! are alpha-blended onto the grayscale image, with the probability itself
//! as the blending weight. Pixels below the display threshold stay fully
//! transparent so faint responses do not tint the whole image.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::infer::ProbabilityMap;
use crate::tensor::Grid2;

/// Probabilities below this render as plain background.
pub const DEFAULT_DISPLAY_THRESHOLD: f32 = 0.1;

/// Colormap anchors at entries 0, 64, 128, 192 and 255: blue, cyan, green,
/// yellow, red. Entries in between interpolate linearly, so entry 128 (the
/// probability-0.5 midpoint) is exactly (0, 255, 0).
const LUT_ANCHORS: [(usize, [u8; 3]); 5] = [
    (0, [0, 0, 255]),
    (64, [0, 255, 255]),
    (128, [0, 255, 0]),
    (192, [255, 255, 0]),
    (255, [255, 0, 0]),
];

/// The full 256-entry lookup table, index = round(probability * 255).
pub fn heatmap_lut() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    for pair in LUT_ANCHORS.windows(2) {
        let (i0, c0) = pair[0];
        let (i1, c1) = pair[1];
        for i in i0..=i1 {
            let t = (i - i0) as f64 / (i1 - i0) as f64;
            for ch in 0..3 {
                let v = f64::from(c0[ch]) + t * (f64::from(c1[ch]) - f64::from(c0[ch]));
                lut[i][ch] = v.round() as u8;
            }
        }
    }
    lut
}

/// Renders with the default display threshold.
pub fn render_heatmap(map: &ProbabilityMap, background: &Grid2<f32>) -> Result<RgbImage> {
    render_heatmap_with(map, background, DEFAULT_DISPLAY_THRESHOLD)
}

/// Alpha-blends the colormapped probabilities over the grayscale background.
/// The background is expected in [0, 1] and is clamped otherwise.
pub fn render_heatmap_with(
    map: &ProbabilityMap,
    background: &Grid2<f32>,
    display_threshold: f32,
) -> Result<RgbImage> {
    let (h, w) = (map.height(), map.width());
    if (background.height(), background.width()) != (h, w) {
        return Err(Error::dim_mismatch(
            "heatmap background",
            format!("{h}x{w}"),
            format!("{}x{}", background.height(), background.width()),
        ));
    }
    let lut = heatmap_lut();
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let gray = f64::from(background.get(y, x).clamp(0.0, 1.0) * 255.0).round();
            let p = map.grid().get(y, x);
            let pixel = if p < display_threshold {
                [gray as u8; 3]
            } else {
                let color = lut[(f64::from(p) * 255.0).round() as usize];
                let alpha = f64::from(p);
                let mut px = [0u8; 3];
                for ch in 0..3 {
                    px[ch] = ((1.0 - alpha) * gray + alpha * f64::from(color[ch])).round() as u8;
                }
                px
            };
            out.put_pixel(x as u32, y as u32, image::Rgb(pixel));
        }
    }
    Ok(out)
}
