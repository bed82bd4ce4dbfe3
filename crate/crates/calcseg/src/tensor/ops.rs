//! Elementwise activations and channel concatenation/splitting.

use super::{Scalar, Shape4, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearity. The model uses ReLU between blocks and sigmoid
/// only when logits are turned into probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Applies the activation elementwise.
pub fn activate<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|x| if x > T::zero() { x } else { T::zero() }),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Numerically stable logistic function: never exponentiates a positive
/// argument, so large `|x|` saturates to exactly 0 or 1 instead of NaN.
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradient with respect to the activation input, computed from the forward
/// *output* (both rules need only the output: ReLU passes gradient where the
/// output is positive, sigmoid scales it by `out * (1 - out)`).
pub fn activate_backward<T: Scalar>(
    output: &Tensor<T>,
    grad_output: &Tensor<T>,
    kind: Activation,
) -> Result<Tensor<T>> {
    if output.shape() != grad_output.shape() {
        return Err(Error::dim_mismatch(
            "activate_backward",
            output.shape(),
            grad_output.shape(),
        ));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&o, &g)| match kind {
            Activation::Relu => {
                if o > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => g * o * (T::one() - o),
        })
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Stacks the inputs along the channel axis, in list order. All inputs must
/// share batch and spatial dimensions.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_channels needs at least one input".into()))?
        .shape();
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        if (s.batch, s.height, s.width) != (first.batch, first.height, first.width) {
            return Err(Error::dim_mismatch(
                "concat_channels",
                format!("batch/spatial dims of {first}"),
                s,
            ));
        }
        channels += s.channels;
    }
    let shape = Shape4::new(first.batch, channels, first.height, first.width);
    let plane = first.height * first.width;
    let mut data = Vec::with_capacity(shape.len());
    for b in 0..first.batch {
        for t in inputs {
            let c = t.shape().channels;
            data.extend_from_slice(&t.data()[b * c * plane..][..c * plane]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: slices a tensor (typically a gradient)
/// back into per-input channel blocks. `channel_counts` must sum to the
/// tensor's channel count.
pub fn split_channels<T: Scalar>(
    tensor: &Tensor<T>,
    channel_counts: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let s = tensor.shape();
    let total: usize = channel_counts.iter().sum();
    if total != s.channels {
        return Err(Error::dim_mismatch(
            "split_channels",
            format!("channel counts summing to {}", s.channels),
            format!("{channel_counts:?} (sum {total})"),
        ));
    }
    let plane = s.height * s.width;
    let mut parts: Vec<Vec<T>> = channel_counts
        .iter()
        .map(|&c| Vec::with_capacity(s.batch * c * plane))
        .collect();
    for b in 0..s.batch {
        let mut offset = b * s.channels * plane;
        for (part, &c) in parts.iter_mut().zip(channel_counts) {
            part.extend_from_slice(&tensor.data()[offset..][..c * plane]);
            offset += c * plane;
        }
    }
    parts
        .into_iter()
        .zip(channel_counts)
        .map(|(data, &c)| Tensor::from_vec(Shape4::new(s.batch, c, s.height, s.width), data))
        .collect()
}
