//! Brownian-bridge conditional diffusion for paired image-to-image
//! translation, with a focus on pixel super-resolution of multi-channel
//! inputs into RGB targets.
//!
//! The crate is organized around a small set of pure building blocks:
//!
//! - [`tensor`]: the `ImageTensor` container and its on-disk formats.
//! - [`imageops`]: color conversion, resampling, patching, augmentation,
//!   and normalization.
//! - [`schedule`]: the discrete Brownian-bridge noise schedule and its
//!   forward/reverse kernels.
//! - [`rng`]: counter-based deterministic random streams.
//!
//! Everything downstream (training, sampling, evaluation, the CLI) composes
//! these pieces. All entry points are deterministic given their seeds; the
//! same inputs produce byte-identical tensors on disk.

pub mod checkpoint;
pub mod denoiser;
pub mod error;
pub mod imageops;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Semantics};
