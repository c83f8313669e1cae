//! Convolutional VQVAE, frozen-backbone classifier probe, and checkpoints.

mod checkpoint;
mod classifier;
mod layers;
mod vqvae;

use thiserror::Error;

use crate::diffcore::DiffError;
use crate::quantizers::QuantizerError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use classifier::{classifier_step, freeze_backbone, ClassifierConfig, ClassifierHead, ClassifierRecord};
pub use layers::{Conv2d, Linear};
pub use vqvae::{vqvae_step, AutoencoderConfig, Decoder, Embeddings, Encoder, StepRecord, VqVae};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: reconstruction {recon}, auxiliary {aux}")]
    NonFinite { step: u64, recon: f64, aux: f64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("backbone parameter `{0}` is not frozen")]
    BackboneNotFrozen(String),
}
