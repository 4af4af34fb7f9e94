//! Automatic image compositing.
//!
//! Pasting a cut-out onto a new background with a hard segmentation mask
//! leaves halos and jagged edges. This crate bundles the classical fixes
//! (feathered alpha compositing, Laplacian-pyramid blending) with a
//! learned pipeline: a two-stream fusion network consumes the foreground
//! and background together with a soft mask and predicts the composite
//! directly, a small refinement network cleans up raw segmentation masks
//! at two scales, and a self-taught data generator builds the training
//! triplets it needs from easy cut-and-paste pairs. Everything runs on a
//! built-in reverse-mode tensor engine — no external ML runtime.
//!
//! Modules:
//! - [`img`]: image containers, 8-bit I/O, resize/blur, distance fields
//! - [`pyramid`]: Gaussian/Laplacian pyramids and multi-band blending
//! - [`composite`]: alpha compositing, feathering, trimaps, mask refinement
//! - [`nn`]: tensors, autograd, conv layers, ADAM, checkpoints, grad checks
//! - [`fusion`]: the multi-stream fusion and mask-refinement networks
//! - [`augment`]: easy/hard training-triplet synthesis
//! - [`eval`]: unknown-region PSNR benchmark over a synthetic test set

pub mod augment;
pub mod composite;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod img;
pub mod nn;
pub mod pyramid;

pub use error::{Error, Result};
