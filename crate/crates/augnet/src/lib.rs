//! Invariance learning with trainable augmentation layers.
//!
//! The crate implements the full stack for building networks that learn
//! which input transformations their data is invariant to:
//!
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode autodiff,
//!   including convolutions, batch norm, an FFT and its adjoint;
//! - [`augment`]: differentiable, magnitude-parametrized augmentations for
//!   images and 1-D signals (affine warps, flips, blends, frequency-domain
//!   transforms);
//! - [`model`]: augmentation layers (softmax-weighted transform mixtures),
//!   copy-averaged forward passes, and the selective regularizer that ties
//!   transform weights to their magnitudes;
//! - [`trunk`]: the small CNN/MLP trunk networks used by the experiments;
//! - [`data`]: deterministic synthetic dataset generators;
//! - [`metrics`]: accuracy and the cosine-distance invariance score;
//! - [`train`]: Adam with magnitude projection and per-epoch telemetry;
//! - [`checks`]: finite-difference gradient suites used by the CLI.

pub mod augment;
pub mod checkpoint;
pub mod checks;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod trunk;

pub use error::AugError;
pub use rng::RngStream;
pub use tensor::{Gradients, Tape, Tensor};
