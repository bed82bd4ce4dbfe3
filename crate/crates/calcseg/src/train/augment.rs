//! Training-time augmentation: random rotation and horizontal flipping,
//! applied identically to the image and its label mask.

use rand::Rng;

use crate::tensor::Grid2;

use super::TrainConfig;

/// The sampled augmentation for one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    /// Counterclockwise rotation in degrees.
    pub angle_deg: f64,
    /// Mirror left-right after rotating.
    pub hflip: bool,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        angle_deg: 0.0,
        hflip: false,
    };
}

/// Draws an augmentation from the configured ranges. The angle is uniform in
/// `rotation_range_deg`; the flip is a fair coin when enabled. Draw order is
/// fixed (angle, then flip) so seeded runs replay exactly.
pub fn sample_augmentation(config: &TrainConfig, rng: &mut impl Rng) -> Augmentation {
    let (lo, hi) = config.rotation_range_deg;
    let angle_deg = rng.gen::<f64>() * (hi - lo) + lo;
    let hflip = config.hflip && rng.gen::<f64>() < 0.5;
    Augmentation { angle_deg, hflip }
}

/// Applies the augmentation: rotation about the image center (image sampled
/// bilinearly, mask by nearest neighbor so labels stay binary), then an
/// exact column-mirroring flip. Pixels rotated in from outside the frame are
/// zero in both outputs, so no spurious positives appear.
pub fn apply_augmentation(
    image: &Grid2<f32>,
    mask: &Grid2<u8>,
    aug: Augmentation,
) -> (Grid2<f32>, Grid2<u8>) {
    debug_assert_eq!(image.height(), mask.height());
    debug_assert_eq!(image.width(), mask.width());
    let (mut img, mut msk) = if aug.angle_deg == 0.0 {
        (image.clone(), mask.clone())
    } else {
        rotate(image, mask, aug.angle_deg)
    };
    if aug.hflip {
        flip_horizontal(&mut img);
        flip_horizontal(&mut msk);
    }
    (img, msk)
}

/// Convenience wrapper: draw, then apply.
pub fn augment(
    image: &Grid2<f32>,
    mask: &Grid2<u8>,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> (Grid2<f32>, Grid2<u8>) {
    apply_augmentation(image, mask, sample_augmentation(config, rng))
}

fn rotate(image: &Grid2<f32>, mask: &Grid2<u8>, angle_deg: f64) -> (Grid2<f32>, Grid2<u8>) {
    let (h, w) = (image.height(), image.width());
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;

    let mut out_img = Grid2::<f32>::new(h, w);
    let mut out_msk = Grid2::<u8>::new(h, w);
    for y in 0..h {
        for x in 0..w {
            // Inverse mapping: where in the source does this output pixel
            // come from, for a counterclockwise rotation by theta?
            let yc = y as f64 - cy;
            let xc = x as f64 - cx;
            let sx = cos * xc + sin * yc + cx;
            let sy = -sin * xc + cos * yc + cy;
            out_img.set(y, x, bilinear(image, sy, sx));
            out_msk.set(y, x, nearest(mask, sy, sx));
        }
    }
    (out_img, out_msk)
}

fn bilinear(image: &Grid2<f32>, sy: f64, sx: f64) -> f32 {
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = (sy - y0) as f32;
    let fx = (sx - x0) as f32;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |y: i64, x: i64| -> f32 {
        if y < 0 || x < 0 || y >= image.height() as i64 || x >= image.width() as i64 {
            0.0
        } else {
            image.get(y as usize, x as usize)
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn nearest(mask: &Grid2<u8>, sy: f64, sx: f64) -> u8 {
    let y = sy.round() as i64;
    let x = sx.round() as i64;
    if y < 0 || x < 0 || y >= mask.height() as i64 || x >= mask.width() as i64 {
        0
    } else {
        mask.get(y as usize, x as usize)
    }
}

fn flip_horizontal<T: Copy + Default + PartialEq>(grid: &mut Grid2<T>) {
    for y in 0..grid.height() {
        grid.row_mut(y).reverse();
    }
}
