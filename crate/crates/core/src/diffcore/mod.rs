//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation of one forward pass; [`Graph::backward`]
//! walks the records in reverse and accumulates exact gradients. Parameters live
//! outside the graph in a [`ParamStore`] and are bound per pass through
//! [`Bindings`]. [`AdamState`] applies the optimizer update.

mod conv;
mod graph;
mod ops;
mod params;
mod tensor;

pub use graph::{DiffTensor, Graph};
pub use ops::straight_through;
pub use params::{AdamConfig, AdamState, Bindings, Gradients, ParamId, ParamStore};
pub use tensor::{broadcast_shape, broadcast_zip, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("backward called on a non-scalar tensor of shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; record a new forward pass")]
    BackwardTwice,
    #[error("no gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("gradient reached frozen parameter {0}")]
    FrozenGradient(String),
    #[error("parameter {0} missing from stored tensors")]
    MissingParameter(String),
}
