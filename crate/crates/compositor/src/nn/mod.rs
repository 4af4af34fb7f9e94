//! Minimal differentiable tensor engine.
//!
//! Everything runs on the CPU in double precision over NCHW tensors.
//! [`Graph`] provides define-by-run reverse-mode differentiation,
//! [`ParamStore`] owns named trainable tensors together with their ADAM
//! state, and [`checkpoint`] round-trips a store through a flat binary
//! file. [`grad_check_inputs`]/[`grad_check_params`] verify any scalar
//! pipeline against central finite differences.

mod adam;
mod checkpoint;
mod conv;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{conv_out_dim, tconv_out_dim};
pub use gradcheck::{grad_check_inputs, grad_check_params};
pub use graph::{Graph, Var};
pub use params::ParamStore;
pub use tensor::Tensor;
