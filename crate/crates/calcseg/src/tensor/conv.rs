//! 2D convolution (cross-correlation) with exact analytic gradients.
//!
//! Stride is always 1 and padding is always `(k-1)/2`, so spatial shape is
//! preserved end to end. Every output plane is accumulated by a single task
//! in a fixed order, so results are bit-identical regardless of how many
//! rayon threads are available.

use rayon::prelude::*;

use super::{Scalar, Shape4, Tensor};
use crate::error::{Error, Result};

/// Output-row chunk width. The accumulators for one chunk stay in registers
/// or L1 across all kernel taps, which is what makes the plain `a + w * s`
/// loops below vectorize well.
const CHUNK: usize = 64;

/// One convolution layer: kernel of shape `(out_channels, in_channels, k, k)`
/// plus a per-output-channel bias. `k` must be odd; the implied zero padding
/// `(k-1)/2` keeps spatial dimensions unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    kernel: Tensor<T>,
    bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(kernel: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let s = kernel.shape();
        if s.height != s.width {
            return Err(Error::InvalidConfig(format!(
                "convolution kernel must be square, got {}x{}",
                s.height, s.width
            )));
        }
        if s.height % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "convolution kernel size must be odd, got {}",
                s.height
            )));
        }
        if bias.len() != s.batch {
            return Err(Error::dim_mismatch(
                "ConvLayer bias",
                format!("{} (one per output channel)", s.batch),
                format!("{}", bias.len()),
            ));
        }
        Ok(Self { kernel, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().batch
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape().height
    }

    /// Zero padding applied on each side: `(k-1)/2`.
    pub fn padding(&self) -> usize {
        (self.kernel_size() - 1) / 2
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn kernel_mut(&mut self) -> &mut Tensor<T> {
        &mut self.kernel
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Trainable scalars in this layer: `k*k*in*out + out`.
    pub fn parameter_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            kernel: self.kernel.cast(),
            bias: self.bias.iter().map(|&b| U::from_f64(b.to_f64())).collect(),
        }
    }
}

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    /// Same shape as the layer input.
    pub grad_input: Tensor<T>,
    /// Same shape as the layer kernel.
    pub grad_kernel: Tensor<T>,
    /// One entry per output channel.
    pub grad_bias: Vec<T>,
}

/// `output[b][oc] = sum_ic input[b][ic] * kernel[oc][ic] + bias[oc]`, with
/// zero padding `(k-1)/2` so the spatial shape is preserved.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.channels != layer.in_channels() {
        return Err(Error::dim_mismatch(
            "conv2d_forward input channels",
            format!(
                "{} (kernel is {})",
                layer.in_channels(),
                layer.kernel.shape()
            ),
            format!("{} (input is {s})", s.channels),
        ));
    }
    let pad = layer.padding();
    let (padded, ph, pw) = pad_planes(input, pad);
    Ok(correlate(
        &padded,
        s.batch,
        s.channels,
        ph,
        pw,
        layer.kernel.data(),
        layer.out_channels(),
        layer.kernel_size(),
        Some(&layer.bias),
        s.height,
        s.width,
    ))
}

/// Gradients of a scalar loss with respect to the layer input, kernel, and
/// bias, given the gradient with respect to the layer output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    if s.channels != layer.in_channels() {
        return Err(Error::dim_mismatch(
            "conv2d_backward input channels",
            format!(
                "{} (kernel is {})",
                layer.in_channels(),
                layer.kernel.shape()
            ),
            format!("{} (input is {s})", s.channels),
        ));
    }
    let expect = Shape4::new(s.batch, layer.out_channels(), s.height, s.width);
    if grad_output.shape() != expect {
        return Err(Error::dim_mismatch(
            "conv2d_backward grad_output",
            format!("{expect}"),
            format!("{}", grad_output.shape()),
        ));
    }

    let k = layer.kernel_size();
    let pad = layer.padding();
    let (in_c, out_c) = (layer.in_channels(), layer.out_channels());

    // grad_input is the correlation of grad_output with the kernel flipped
    // 180 degrees spatially and transposed in its channel dimensions.
    let flipped = flip_transpose(layer.kernel.data(), out_c, in_c, k);
    let (padded_go, gph, gpw) = pad_planes(grad_output, pad);
    let grad_input = correlate(
        &padded_go, s.batch, out_c, gph, gpw, &flipped, in_c, k, None, s.height, s.width,
    );

    // grad_kernel[oc][ic][ky][kx] is the dot product of the grad_output plane
    // with the padded input plane shifted by (ky, kx). Batches and rows are
    // folded in a fixed order per element.
    let (padded_in, ph, pw) = pad_planes(input, pad);
    let kk = k * k;
    let mut grad_kernel = Tensor::zeros(layer.kernel.shape());
    grad_kernel
        .data_mut()
        .par_chunks_mut(in_c * kk)
        .enumerate()
        .for_each(|(oc, gk)| {
            for b in 0..s.batch {
                let gplane = grad_output.plane(b, oc);
                for ic in 0..in_c {
                    let pplane = &padded_in[(b * in_c + ic) * ph * pw..][..ph * pw];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = T::zero();
                            for y in 0..s.height {
                                acc = acc
                                    + dot(
                                        &gplane[y * s.width..][..s.width],
                                        &pplane[(y + ky) * pw + kx..][..s.width],
                                    );
                            }
                            gk[ic * kk + ky * k + kx] = gk[ic * kk + ky * k + kx] + acc;
                        }
                    }
                }
            }
        });

    let mut grad_bias = vec![T::zero(); out_c];
    grad_bias.par_iter_mut().enumerate().for_each(|(oc, gb)| {
        for b in 0..s.batch {
            for &g in grad_output.plane(b, oc) {
                *gb = *gb + g;
            }
        }
    });

    Ok(ConvGrads {
        grad_input,
        grad_kernel,
        grad_bias,
    })
}

/// Zero-pads every `(batch, channel)` plane by `pad` on each side.
/// Returns the packed planes plus the padded plane dimensions.
fn pad_planes<T: Scalar>(input: &Tensor<T>, pad: usize) -> (Vec<T>, usize, usize) {
    let s = input.shape();
    let (ph, pw) = (s.height + 2 * pad, s.width + 2 * pad);
    let mut out = vec![T::zero(); s.batch * s.channels * ph * pw];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = input.plane(b, c);
            let dst = &mut out[(b * s.channels + c) * ph * pw..][..ph * pw];
            for y in 0..s.height {
                dst[(y + pad) * pw + pad..][..s.width]
                    .copy_from_slice(&src[y * s.width..][..s.width]);
            }
        }
    }
    (out, ph, pw)
}

/// Correlation core shared by the forward pass and the input gradient.
///
/// `padded` holds `batch * in_c` zero-padded planes of size `ph * pw`;
/// `kernel` is `(out_c, in_c, k, k)` packed row-major. One task produces one
/// output plane, accumulating rows left to right, kernel taps in row-major
/// order, input channels outermost.
#[allow(clippy::too_many_arguments)]
fn correlate<T: Scalar>(
    padded: &[T],
    batch: usize,
    in_c: usize,
    ph: usize,
    pw: usize,
    kernel: &[T],
    out_c: usize,
    k: usize,
    bias: Option<&[T]>,
    out_h: usize,
    out_w: usize,
) -> Tensor<T> {
    debug_assert_eq!(padded.len(), batch * in_c * ph * pw);
    debug_assert_eq!(kernel.len(), out_c * in_c * k * k);
    debug_assert_eq!(ph, out_h + k - 1);
    debug_assert_eq!(pw, out_w + k - 1);
    let kk = k * k;
    let mut out = Tensor::zeros(Shape4::new(batch, out_c, out_h, out_w));
    let plane_len = out_h * out_w;
    out.data_mut()
        .par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let b = plane_idx / out_c;
            let oc = plane_idx % out_c;
            let bias_v = bias.map_or(T::zero(), |bs| bs[oc]);
            let kbase = &kernel[oc * in_c * kk..][..in_c * kk];
            let mut acc = [T::zero(); CHUNK];
            for y in 0..out_h {
                let mut x0 = 0;
                while x0 < out_w {
                    let cl = CHUNK.min(out_w - x0);
                    acc[..cl].fill(T::zero());
                    for ic in 0..in_c {
                        let pplane = &padded[(b * in_c + ic) * ph * pw..][..ph * pw];
                        let kplane = &kbase[ic * kk..][..kk];
                        for ky in 0..k {
                            let prow = &pplane[(y + ky) * pw + x0..][..cl + k - 1];
                            for kx in 0..k {
                                let w = kplane[ky * k + kx];
                                let src = &prow[kx..kx + cl];
                                for (a, &s) in acc[..cl].iter_mut().zip(src) {
                                    *a = *a + w * s;
                                }
                            }
                        }
                    }
                    for (o, &a) in out_plane[y * out_w + x0..][..cl].iter_mut().zip(&acc[..cl]) {
                        *o = a + bias_v;
                    }
                    x0 += cl;
                }
            }
        });
    out
}

/// Reindexes `(out_c, in_c, k, k)` into `(in_c, out_c, k, k)` with both
/// spatial axes reversed, which is the kernel that maps output gradients back
/// to input gradients.
fn flip_transpose<T: Scalar>(kernel: &[T], out_c: usize, in_c: usize, k: usize) -> Vec<T> {
    let kk = k * k;
    let mut flipped = vec![T::zero(); kernel.len()];
    for oc in 0..out_c {
        for ic in 0..in_c {
            for ky in 0..k {
                for kx in 0..k {
                    flipped[(ic * out_c + oc) * kk + (k - 1 - ky) * k + (k - 1 - kx)] =
                        kernel[(oc * in_c + ic) * kk + ky * k + kx];
                }
            }
        }
    }
    flipped
}

/// Dot product with eight independent accumulators folded in a fixed order.
/// Fast and deterministic; not dependent on slice alignment.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xs, ys) in (&mut ca).zip(&mut cb) {
        for j in 0..8 {
            acc[j] = acc[j] + xs[j] * ys[j];
        }
    }
    for (j, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[j] = acc[j] + x * y;
    }
    let mut sum = T::zero();
    for a in acc {
        sum = sum + a;
    }
    sum
}
