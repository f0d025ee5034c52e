//! Recurrent convolutional encoder-decoder for synthesizing rotated views of
//! an object from a single image: encode once, step the pose units with
//! action-selected linear transforms, decode a frame (and optionally a
//! foreground mask) at every step.
//!
//! The crate bundles everything needed to exercise the model end to end at
//! desk scale: a minimal reverse-mode tape over the handful of primitives the
//! network uses, a procedural rotating-object dataset generator, a curriculum
//! trainer (BPTT + ADAM), evaluation protocols (per-step reconstruction MSE,
//! cross-view recognition, a pixel-averaging KNN baseline, a supervised
//! classifier baseline, latent interpolation), and a CLI that drives the
//! whole pipeline.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod gradcheck;
pub mod ops;
pub mod pnm;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
