//! Dense rank-4 tensors and 2D grids.
//!
//! This is the entire compute substrate of the crate: a contiguous
//! `(batch, channel, row, column)` row-major tensor, 2D convolution with its
//! exact backward pass, elementwise activations, and channel concatenation.
//! Weights and activations are `f32` in production; every operation is
//! generic over [`Scalar`] so gradient checks can run the same code in `f64`.

mod conv;
mod ops;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use ops::{activate, activate_backward, concat_channels, split_channels, Activation};
pub(crate) use ops::sigmoid;

use std::fmt;

use crate::error::{Error, Result};

/// Scalar element type of tensors: `f32` for production, `f64` for
/// gradient verification.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one (batch, channel) plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense rank-4 tensor in `(batch, channel, row, column)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps an existing buffer. Fails if the length does not match the shape.
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::dim_mismatch(
                "Tensor::from_vec",
                format!("{} elements for shape {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// One `(batch, channel)` plane as a `height * width` slice.
    pub fn plane(&self, batch: usize, channel: usize) -> &[T] {
        let p = self.shape.plane_len();
        let start = (batch * self.shape.channels + channel) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, batch: usize, channel: usize) -> &mut [T] {
        let p = self.shape.plane_len();
        let start = (batch * self.shape.channels + channel) * p;
        &mut self.data[start..start + p]
    }

    #[inline]
    pub fn get(&self, batch: usize, channel: usize, row: usize, col: usize) -> T {
        let s = &self.shape;
        self.data[((batch * s.channels + channel) * s.height + row) * s.width + col]
    }

    #[inline]
    pub fn set(&mut self, batch: usize, channel: usize, row: usize, col: usize, value: T) {
        let s = &self.shape;
        self.data[((batch * s.channels + channel) * s.height + row) * s.width + col] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Re-expresses the tensor in another scalar precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

/// Single-channel 2D grid in row-major order. Images, masks and probability
/// maps all use this; element type distinguishes them (`f32` values, `u8`
/// binary labels).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy + Default + PartialEq> Grid2<T> {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![T::default(); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim_mismatch(
                "Grid2::from_vec",
                format!("{} elements for {height}x{width}", height * width),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [T] {
        &mut self.data[row * self.width..(row + 1) * self.width]
    }

    /// Copies a rectangular window `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Grid2<T> {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Grid2 {
            height: h,
            width: w,
            data,
        }
    }

    /// Number of cells different from the default value (for masks: foreground count).
    pub fn count_nonzero(&self) -> usize {
        let zero = T::default();
        self.data.iter().filter(|&&v| v != zero).count()
    }
}

impl Grid2<f32> {
    /// Views the grid as a `(1, 1, h, w)` tensor (copies the buffer).
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor {
            shape: Shape4::new(1, 1, self.height, self.width),
            data: self.data.clone(),
        }
    }
}

impl Grid2<u8> {
    /// Binary mask as a `(1, 1, h, w)` 0/1 tensor of the requested precision.
    pub fn to_label_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: Shape4::new(1, 1, self.height, self.width),
            data: self
                .data
                .iter()
                .map(|&v| if v != 0 { T::one() } else { T::zero() })
                .collect(),
        }
    }
}
