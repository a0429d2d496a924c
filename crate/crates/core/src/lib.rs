//! Collider-biased datasets, gradient-ratio diagnostics and latent
//! adversarial debiasing on a small reverse-mode autodiff engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod biasdata;
pub mod checkpoint;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod vqvae;
pub mod walk;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
