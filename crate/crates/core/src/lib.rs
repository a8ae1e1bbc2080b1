//! Differentially private SGD over a small reverse-mode autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and forward/backward numeric kernels.
//! * [`autodiff`]: parameter trees and a tape that differentiates per-example
//!   losses, including per-example gradient norms without materializing
//!   per-example gradients.
//! * [`dp`]: clipping, sharded Gaussian noise, virtual steps and the
//!   momentum optimizer that together form a private training step.
//! * [`accountant`]: Rényi-DP accounting for the Poisson-subsampled Gaussian
//!   mechanism and (ε, δ) conversion.
//! * [`models`]: logistic regression, MLPs and the simpleVGG conv family.
//! * [`data`]: dataset readers, synthetic generators and samplers.

pub mod accountant;
pub mod autodiff;
pub mod data;
pub mod dp;
mod error;
pub mod models;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
