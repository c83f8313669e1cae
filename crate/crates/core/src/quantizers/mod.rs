//! Vector quantizers sharing one forward interface.
//!
//! Every quantizer consumes encoder latents as rows of shape `(n, d)` and
//! returns quantized rows of the same shape wired for straight-through
//! gradients. Trainable state lives in a [`ParamStore`] under the
//! `quantizer.` prefix so checkpoints and optimizers treat it like any other
//! network weight.

mod gumbel;
mod identity;
mod kmeans;
mod planes;
mod schedule;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use thiserror::Error;

use crate::diffcore::{Bindings, DiffError, DiffTensor, ParamStore, Tensor};
use crate::geometry::{BallConfig, GeometryError};

pub use gumbel::{gumbel_softmax_sample, GumbelMode, GumbelVq};
pub use identity::IdentityQuantizer;
pub use kmeans::{nearest_euclidean, nearest_poincare, HyperKmeansVq, KmeansVq};
pub use planes::{hypervq_codebook, HyperEmbMatVq, HyperVq, HyperbolicHyperplane, PlaneParams};
pub use schedule::TemperatureSchedule;

/// Parameter-name prefix shared by all quantizer tensors.
pub const PARAM_PREFIX: &str = "quantizer.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizerError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid temperature schedule: {0}")]
    InvalidSchedule(String),
    #[error("a codebook needs at least 2 entries, got {0}")]
    TooFewCodes(usize),
    #[error("latent rows have dimension {found}, quantizer expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown quantizer `{0}`")]
    UnknownKind(String),
    #[error("quantizer `{0}` has no codebook")]
    NoCodebook(QuantizerKind),
}

/// Forward-pass regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Output of one quantizer forward pass.
#[derive(Debug)]
pub struct QuantizeResult<'g> {
    pub z_q: DiffTensor<'g>,
    pub indices: Vec<usize>,
    pub logits: Option<DiffTensor<'g>>,
    pub aux_loss: DiffTensor<'g>,
    pub usage_counts: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantizerKind {
    HyperVq,
    KmeansVq,
    GumbelVq,
    HyperKmeansVq,
    HyperEmbMatVq,
    Identity,
}

impl QuantizerKind {
    pub const ALL: [QuantizerKind; 6] =
        [Self::HyperVq, Self::KmeansVq, Self::GumbelVq, Self::HyperKmeansVq, Self::HyperEmbMatVq, Self::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Self::HyperVq => "hypervq",
            Self::KmeansVq => "kmeansvq",
            Self::GumbelVq => "gumbelvq",
            Self::HyperKmeansVq => "hyperkmeansvq",
            Self::HyperEmbMatVq => "hyperembmatvq",
            Self::Identity => "identity",
        }
    }
}

impl fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantizerKind {
    type Err = QuantizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| QuantizerError::UnknownKind(s.to_string()))
    }
}

/// Common interface of every quantizer variant.
pub trait Quantizer {
    fn kind(&self) -> QuantizerKind;

    /// Number of codebook entries `K`.
    fn num_codes(&self) -> usize;

    /// Latent dimension `d`.
    fn dim(&self) -> usize;

    /// Quantizes `z_e` of shape `(n, d)`.
    fn forward<'g>(
        &mut self,
        z_e: &DiffTensor<'g>,
        params: &Bindings<'g, '_>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<QuantizeResult<'g>, QuantizerError>;

    /// Hook run after each optimizer step (renormalization, EMA updates, guards).
    fn after_step(&mut self, _store: &mut ParamStore, _rng: &mut dyn RngCore) -> Result<(), QuantizerError> {
        Ok(())
    }

    /// Euclidean codebook rows `(K, d)` as seen by the decoder.
    fn codebook(&self, store: &ParamStore) -> Result<Tensor, QuantizerError>;

    fn schedule(&self) -> Option<&TemperatureSchedule> {
        None
    }
}

/// Construction parameters shared by all variants.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerConfig {
    pub kind: QuantizerKind,
    pub num_codes: usize,
    pub dim: usize,
    pub ball: BallConfig,
    pub beta: f64,
    pub ema: bool,
    pub ema_decay: f64,
    pub gumbel_hard: bool,
    pub schedule: TemperatureSchedule,
}

impl QuantizerConfig {
    pub fn new(kind: QuantizerKind, num_codes: usize, dim: usize) -> Self {
        Self {
            kind,
            num_codes,
            dim,
            ball: BallConfig::default(),
            beta: 0.25,
            ema: false,
            ema_decay: 0.99,
            gumbel_hard: true,
            schedule: TemperatureSchedule::default(),
        }
    }
}

/// Builds the configured variant and registers its parameters in `store`.
pub fn build(
    cfg: &QuantizerConfig,
    store: &mut ParamStore,
    rng: &mut dyn RngCore,
) -> Result<Box<dyn Quantizer>, QuantizerError> {
    if cfg.kind != QuantizerKind::Identity && cfg.num_codes < 2 {
        return Err(QuantizerError::TooFewCodes(cfg.num_codes));
    }
    let gumbel = if cfg.gumbel_hard { GumbelMode::Hard } else { GumbelMode::Soft };
    Ok(match cfg.kind {
        QuantizerKind::HyperVq => {
            Box::new(HyperVq::new(store, cfg.num_codes, cfg.dim, cfg.ball, cfg.schedule.clone(), gumbel, rng))
        }
        QuantizerKind::HyperEmbMatVq => {
            Box::new(HyperEmbMatVq::new(store, cfg.num_codes, cfg.dim, cfg.ball, cfg.schedule.clone(), gumbel, rng))
        }
        QuantizerKind::GumbelVq => {
            Box::new(GumbelVq::new(store, cfg.num_codes, cfg.dim, cfg.schedule.clone(), gumbel, rng))
        }
        QuantizerKind::KmeansVq => {
            let q = KmeansVq::new(store, cfg.num_codes, cfg.dim, cfg.beta, rng);
            Box::new(if cfg.ema { q.with_ema(store, cfg.ema_decay) } else { q })
        }
        QuantizerKind::HyperKmeansVq => {
            Box::new(HyperKmeansVq::new(store, cfg.num_codes, cfg.dim, cfg.beta, cfg.ball, rng))
        }
        QuantizerKind::Identity => Box::new(IdentityQuantizer::new(cfg.dim)),
    })
}

pub(crate) fn check_rows(z_e: &DiffTensor<'_>, dim: usize) -> Result<usize, QuantizerError> {
    let shape = z_e.shape();
    if shape.len() != 2 {
        return Err(DiffError::Shape(format!("quantizer expects (n, d) rows, got {shape:?}")).into());
    }
    if shape[1] != dim {
        return Err(QuantizerError::DimensionMismatch { expected: dim, found: shape[1] });
    }
    Ok(shape[0])
}

/// Row-wise argmax with ties resolved to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = t.shape()[t.ndim() - 1];
    t.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Constant `(n, K)` one-hot matrix for `indices`.
pub fn one_hot(indices: &[usize], k: usize) -> Tensor {
    let mut data = vec![0.0; indices.len() * k];
    for (i, &j) in indices.iter().enumerate() {
        data[i * k + j] = 1.0;
    }
    Tensor::new(vec![indices.len(), k], data).expect("one-hot shape is consistent")
}

/// Histogram of `indices` over `k` codes.
pub fn usage_counts(indices: &[usize], k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for &i in indices {
        counts[i] += 1;
    }
    counts
}

/// Mean over rows of the squared Euclidean row distance.
pub(crate) fn mean_row_sq_dist<'g>(a: &DiffTensor<'g>, b: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
    Ok(a.sub(b)?.square().sum_axis(1)?.mean())
}

pub(crate) fn zero_loss<'g>(params: &Bindings<'g, '_>) -> DiffTensor<'g> {
    params.graph().constant(Tensor::scalar(0.0))
}
