use rand::RngCore;

use super::{check_rows, zero_loss, Mode, QuantizeResult, Quantizer, QuantizerError, QuantizerKind};
use crate::diffcore::{Bindings, DiffTensor, ParamStore, Tensor};

/// Pass-through debug quantizer: `z_q = z_e`, every row assigned code 0.
#[derive(Clone, Debug)]
pub struct IdentityQuantizer {
    dim: usize,
}

impl IdentityQuantizer {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Quantizer for IdentityQuantizer {
    fn kind(&self) -> QuantizerKind {
        QuantizerKind::Identity
    }

    fn num_codes(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn forward<'g>(
        &mut self,
        z_e: &DiffTensor<'g>,
        params: &Bindings<'g, '_>,
        _mode: Mode,
        _rng: &mut dyn RngCore,
    ) -> Result<QuantizeResult<'g>, QuantizerError> {
        let n = check_rows(z_e, self.dim)?;
        Ok(QuantizeResult {
            z_q: *z_e,
            indices: vec![0; n],
            logits: None,
            aux_loss: zero_loss(params),
            usage_counts: vec![n as u64],
        })
    }

    fn codebook(&self, _store: &ParamStore) -> Result<Tensor, QuantizerError> {
        Err(QuantizerError::NoCodebook(QuantizerKind::Identity))
    }
}
