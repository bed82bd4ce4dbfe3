//! Stochastic gradient descent with classic momentum.

use crate::error::{Error, Result};
use crate::model::{Model, ModelGrads};
use crate::tensor::Scalar;

/// Momentum buffer, one scalar per model parameter, in the model's build
/// order. Starts at zero.
#[derive(Debug, Clone)]
pub struct OptimizerState<T = f32> {
    velocity: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self {
            velocity: vec![T::zero(); model.parameter_count()],
        }
    }

    pub fn velocity(&self) -> &[T] {
        &self.velocity
    }
}

/// One update: `v <- momentum * v + g` followed by `p <- p - lr * v` for
/// every parameter (velocity update before application).
///
/// Rejects the whole step when any gradient component is non-finite, naming
/// the first offending layer; parameters and velocity are left untouched in
/// that case.
pub fn sgd_momentum_step<T: Scalar>(
    model: &mut Model<T>,
    grads: &ModelGrads<T>,
    state: &mut OptimizerState<T>,
    learning_rate: T,
    momentum: T,
) -> Result<()> {
    for (layer_grads, name) in grads.layers().zip(model.layer_names()) {
        if !layer_grads.grad_kernel.is_all_finite()
            || !layer_grads.grad_bias.iter().all(|b| b.is_finite())
        {
            return Err(Error::NonFiniteGradient { layer: name });
        }
    }

    let mut offset = 0;
    for (layer, layer_grads) in model.layers_mut().zip(grads.layers()) {
        if layer.kernel().shape() != layer_grads.grad_kernel.shape()
            || layer.bias().len() != layer_grads.grad_bias.len()
        {
            return Err(Error::dim_mismatch(
                "sgd_momentum_step",
                layer.kernel().shape(),
                layer_grads.grad_kernel.shape(),
            ));
        }
        let klen = layer.kernel().len();
        update(
            layer.kernel_mut().data_mut(),
            layer_grads.grad_kernel.data(),
            &mut state.velocity[offset..offset + klen],
            learning_rate,
            momentum,
        );
        offset += klen;
        let blen = layer.bias().len();
        update(
            layer.bias_mut(),
            &layer_grads.grad_bias,
            &mut state.velocity[offset..offset + blen],
            learning_rate,
            momentum,
        );
        offset += blen;
    }
    Ok(())
}

fn update<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity) {
        *v = momentum * *v + g;
        *p = *p - lr * *v;
    }
}
