//! The slim fully convolutional segmentation network.
//!
//! The network is a chain of blocks; each block runs several convolutions of
//! different kernel sizes in parallel over the same input and concatenates
//! their outputs, followed by a ReLU. A final convolution maps the last
//! block's channels to a single per-pixel logit. Stride is 1 and padding is
//! "same" everywhere, so a full-resolution image in gives a full-resolution
//! logit map out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    activate, activate_backward, concat_channels, conv2d_backward, conv2d_forward,
    split_channels, Activation, ConvLayer, Scalar, Shape4, Tensor,
};

/// Architecture hyperparameters. The defaults give a receptive field of
/// 45x45 pixels and 478,913 trainable parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Number of parallel-convolution blocks.
    pub num_blocks: usize,
    /// Kernel size of each parallel branch within a block.
    pub branch_kernels: Vec<usize>,
    /// Output channels per branch; a block outputs
    /// `branch_kernels.len() * branch_width` channels.
    pub branch_width: usize,
    /// Kernel size of the final 1-channel convolution.
    pub final_kernel: usize,
    /// Channels of the input image (1 for grayscale).
    pub input_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            num_blocks: 5,
            branch_kernels: vec![1, 3, 5, 9],
            branch_width: 16,
            final_kernel: 5,
            input_channels: 1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::InvalidConfig("num_blocks must be at least 1".into()));
        }
        if self.branch_kernels.is_empty() {
            return Err(Error::InvalidConfig(
                "branch_kernels must name at least one kernel size".into(),
            ));
        }
        for &k in &self.branch_kernels {
            if k % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "branch kernel sizes must be odd, got {k}"
                )));
            }
        }
        if self.final_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "final_kernel must be odd, got {}",
                self.final_kernel
            )));
        }
        if self.branch_width == 0 {
            return Err(Error::InvalidConfig("branch_width must be at least 1".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::InvalidConfig(
                "input_channels must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Channels coming out of every block: one branch worth per kernel size.
    pub fn block_channels(&self) -> usize {
        self.branch_kernels.len() * self.branch_width
    }

    /// Edge length of the square input window that can influence one output
    /// pixel: `1 + num_blocks*(max_kernel - 1) + (final_kernel - 1)`. Exact
    /// for this all-stride-1 topology.
    pub fn receptive_field(&self) -> usize {
        let max_k = self.branch_kernels.iter().copied().max().unwrap_or(1);
        1 + self.num_blocks * (max_k - 1) + (self.final_kernel - 1)
    }

    /// Closed-form trainable parameter count: per layer `k*k*in*out + out`,
    /// summed over every branch of every block plus the final layer.
    pub fn parameter_count(&self) -> usize {
        let ksq: usize = self.branch_kernels.iter().map(|&k| k * k).sum();
        let cat = self.block_channels();
        let first = ksq * self.input_channels * self.branch_width + cat;
        let rest = (self.num_blocks - 1) * (ksq * cat * self.branch_width + cat);
        let final_layer = self.final_kernel * self.final_kernel * cat + 1;
        first + rest + final_layer
    }
}

/// A built network: per-block branch layers plus the final logit layer.
#[derive(Debug, Clone)]
pub struct Model<T = f32> {
    config: ArchConfig,
    blocks: Vec<Vec<ConvLayer<T>>>,
    final_layer: ConvLayer<T>,
}

/// Everything the backward pass needs from a forward pass: the input, each
/// block's post-ReLU output, and the logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T = f32> {
    input: Tensor<T>,
    block_outputs: Vec<Tensor<T>>,
    logits: Tensor<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }
}

/// Kernel and bias gradients for one layer.
#[derive(Debug, Clone)]
pub struct LayerGrads<T = f32> {
    pub grad_kernel: Tensor<T>,
    pub grad_bias: Vec<T>,
}

/// Gradients for every layer, in build order (blocks first, branches in
/// kernel-list order, final layer last). The order matches
/// [`Model::layers`] and [`Model::layer_names`].
#[derive(Debug, Clone)]
pub struct ModelGrads<T = f32> {
    pub blocks: Vec<Vec<LayerGrads<T>>>,
    pub final_layer: LayerGrads<T>,
}

impl<T: Scalar> ModelGrads<T> {
    /// Layers in build order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerGrads<T>> {
        self.blocks
            .iter()
            .flatten()
            .chain(std::iter::once(&self.final_layer))
    }

    /// True when every gradient component is finite.
    pub fn is_all_finite(&self) -> bool {
        self.layers().all(|l| {
            l.grad_kernel.is_all_finite() && l.grad_bias.iter().all(|b| b.is_finite())
        })
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model with fan-in-scaled uniform initialization
    /// (`U(-1/sqrt(fan_in), 1/sqrt(fan_in))`), deterministic in `seed`.
    /// Weights are drawn in 64-bit and rounded, so the same seed gives the
    /// same model in both precisions.
    pub fn build(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut in_c = config.input_channels;
        for _ in 0..config.num_blocks {
            let block = config
                .branch_kernels
                .iter()
                .map(|&k| init_layer(&mut rng, config.branch_width, in_c, k))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(block);
            in_c = config.block_channels();
        }
        let final_layer = init_layer(&mut rng, 1, in_c, config.final_kernel)?;
        Ok(Self {
            config,
            blocks,
            final_layer,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    /// Layers in build order: block by block, branches in kernel-list order,
    /// then the final layer. Checkpoints and the optimizer rely on this
    /// order being stable.
    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.blocks
            .iter()
            .flatten()
            .chain(std::iter::once(&self.final_layer))
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        self.blocks
            .iter_mut()
            .flatten()
            .chain(std::iter::once(&mut self.final_layer))
    }

    /// One human-readable name per layer, in build order, e.g.
    /// `block3/conv5x5` or `final/conv5x5`.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for layer in block {
                let k = layer.kernel_size();
                names.push(format!("block{}/conv{k}x{k}", b + 1));
            }
        }
        let k = self.final_layer.kernel_size();
        names.push(format!("final/conv{k}x{k}"));
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(ConvLayer::parameter_count).sum()
    }

    /// All parameters flattened in build order, kernel before bias within
    /// each layer. This is the checkpoint payload order.
    pub fn flatten_parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in self.layers() {
            out.extend_from_slice(layer.kernel().data());
            out.extend_from_slice(layer.bias());
        }
        out
    }

    /// Overwrites all parameters from a flat slice in build order.
    pub fn load_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::dim_mismatch(
                "Model::load_parameters",
                self.parameter_count(),
                params.len(),
            ));
        }
        let mut offset = 0;
        for layer in self.layers_mut() {
            let klen = layer.kernel().len();
            layer
                .kernel_mut()
                .data_mut()
                .copy_from_slice(&params[offset..offset + klen]);
            offset += klen;
            let blen = layer.bias().len();
            layer
                .bias_mut()
                .copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|block| block.iter().map(ConvLayer::cast).collect())
                .collect(),
            final_layer: self.final_layer.cast(),
        }
    }

    /// Runs the network, returning per-pixel logits with the input's spatial
    /// shape. Intermediates are dropped as soon as possible; use
    /// [`Model::forward_trace`] when a backward pass will follow.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut current = None;
        for block in &self.blocks {
            let x = current.as_ref().unwrap_or(input);
            current = Some(run_block(block, x)?);
        }
        conv2d_forward(current.as_ref().unwrap_or(input), &self.final_layer)
    }

    /// Like [`Model::forward`], but keeps every block output so
    /// [`Model::backward`] can run.
    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.check_input(input)?;
        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let x = block_outputs.last().unwrap_or(input);
            block_outputs.push(run_block(block, x)?);
        }
        let logits = conv2d_forward(
            block_outputs.last().unwrap_or(input),
            &self.final_layer,
        )?;
        Ok(ForwardTrace {
            input: input.clone(),
            block_outputs,
            logits,
        })
    }

    /// Backpropagates a logit gradient through the traced forward pass,
    /// producing kernel and bias gradients for every layer.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_logits: &Tensor<T>) -> Result<ModelGrads<T>> {
        let final_input = trace.block_outputs.last().unwrap_or(&trace.input);
        let final_grads = conv2d_backward(final_input, &self.final_layer, grad_logits)?;
        let mut grad = final_grads.grad_input;
        let widths = vec![self.config.branch_width; self.config.branch_kernels.len()];

        let mut blocks = vec![Vec::new(); self.blocks.len()];
        for (b, block) in self.blocks.iter().enumerate().rev() {
            let post_relu = &trace.block_outputs[b];
            let grad_concat = activate_backward(post_relu, &grad, Activation::Relu)?;
            let branch_grads = split_channels(&grad_concat, &widths)?;
            let block_input = if b == 0 {
                &trace.input
            } else {
                &trace.block_outputs[b - 1]
            };
            let mut grad_in_sum: Option<Tensor<T>> = None;
            for (layer, branch_grad) in block.iter().zip(&branch_grads) {
                let g = conv2d_backward(block_input, layer, branch_grad)?;
                grad_in_sum = Some(match grad_in_sum {
                    None => g.grad_input,
                    Some(mut acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(g.grad_input.data()) {
                            *a = *a + v;
                        }
                        acc
                    }
                });
                blocks[b].push(LayerGrads {
                    grad_kernel: g.grad_kernel,
                    grad_bias: g.grad_bias,
                });
            }
            grad = grad_in_sum.expect("blocks always have at least one branch");
        }

        Ok(ModelGrads {
            blocks,
            final_layer: LayerGrads {
                grad_kernel: final_grads.grad_kernel,
                grad_bias: final_grads.grad_bias,
            },
        })
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = input.shape();
        if s.channels != self.config.input_channels {
            return Err(Error::dim_mismatch(
                "Model::forward input channels",
                self.config.input_channels,
                format!("{} (input is {s})", s.channels),
            ));
        }
        Ok(())
    }
}

/// One parallel block: every branch convolves the same input, outputs are
/// concatenated in branch order, then ReLU.
fn run_block<T: Scalar>(block: &[ConvLayer<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
    let branch_outputs = block
        .iter()
        .map(|layer| conv2d_forward(input, layer))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<T>> = branch_outputs.iter().collect();
    Ok(activate(&concat_channels(&refs)?, Activation::Relu))
}

fn init_layer<T: Scalar>(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    k: usize,
) -> Result<ConvLayer<T>> {
    let fan_in = (k * k * in_c) as f64;
    let bound = 1.0 / fan_in.sqrt();
    let mut draw = |n: usize| -> Vec<T> {
        (0..n)
            .map(|_| T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound))
            .collect()
    };
    let kernel = Tensor::from_vec(Shape4::new(out_c, in_c, k, k), draw(out_c * in_c * k * k))?;
    let bias = draw(out_c);
    ConvLayer::new(kernel, bias)
}
