//! Per-pixel microcalcification segmentation for full-resolution mammograms.
//!
//! The crate is self-contained: a small dense-tensor engine with exact
//! convolution gradients ([`tensor`]), a slim fully convolutional model built
//! from parallel multi-scale convolution blocks ([`model`]), patch training
//! with online hard negative mining ([`train`]), overlap-tiled full-image
//! inference ([`infer`]), detection and pixel metrics ([`eval`]), and
//! connected-component shape statistics ([`morph`]). A synthetic data
//! generator ([`data::synth`]) produces mammogram-like images so every part
//! of the pipeline can be exercised without clinical data.
//!
//! Everything is deterministic: the same seed, data, and configuration
//! produce bit-identical weights, probability maps, and reports, regardless
//! of thread count.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod infer;
pub mod model;
pub mod morph;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Runs `f` on a rayon pool with exactly `threads` workers; `0` means one
/// worker per available core. Results do not depend on the choice, only
/// wall-clock time does.
pub fn run_with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build rayon thread pool")
        .install(f)
}
