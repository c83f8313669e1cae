//! Vector quantization in hyperbolic space.
//!
//! Latents from a Euclidean encoder are mapped onto the Poincaré ball, classified
//! against `K` learnable hyperbolic hyperplanes with a multinomial logistic
//! regression, and replaced by the representative point of the winning
//! hyperplane. The crate also carries the baseline quantizers, a small
//! convolutional VQVAE and classifier probe, data loading and cluster metrics.

pub mod data;
pub mod diffcore;
pub mod geometry;
pub mod metrics;
pub mod models;
pub mod quantizers;

pub use diffcore::{DiffError, DiffTensor, Graph, Tensor};

#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;
