use rand::distr::Open01;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use super::{
    argmax_rows, check_rows, one_hot, usage_counts, zero_loss, Mode, QuantizeResult, Quantizer, QuantizerError,
    QuantizerKind, TemperatureSchedule, PARAM_PREFIX,
};
use crate::diffcore::{straight_through, Bindings, DiffTensor, ParamId, ParamStore, Tensor};

/// How a Gumbel-softmax sample is turned into a selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GumbelMode {
    /// Relaxed sample `softmax((logits + g) / τ)`.
    Soft,
    /// One-hot of the relaxed sample's argmax, with the relaxed sample's gradient.
    Hard,
    /// Noise-free one-hot argmax of the logits.
    Eval,
}

/// Samples a Gumbel-softmax selection over the last axis of `(n, K)` logits.
pub fn gumbel_softmax_sample<'g>(
    logits: &DiffTensor<'g>,
    tau: f64,
    mode: GumbelMode,
    rng: &mut dyn RngCore,
) -> Result<DiffTensor<'g>, QuantizerError> {
    if !(tau > 0.0) {
        return Err(QuantizerError::InvalidTemperature(tau));
    }
    let shape = logits.shape();
    let k = shape[shape.len() - 1];
    let axis = shape.len() - 1;
    if mode == GumbelMode::Eval {
        let idx = argmax_rows(&logits.value());
        return Ok(logits.graph().constant(one_hot(&idx, k).reshape(&shape)?));
    }
    let noise: Vec<f64> = (0..logits.numel())
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        })
        .collect();
    let noise = logits.graph().constant(Tensor::new(shape.clone(), noise)?);
    let soft = logits.add(&noise)?.scale(1.0 / tau).softmax(axis)?;
    if mode == GumbelMode::Soft {
        return Ok(soft);
    }
    let idx = argmax_rows(&soft.value());
    let hard = logits.graph().constant(one_hot(&idx, k).reshape(&shape)?);
    Ok(straight_through(&hard, &soft)?)
}

/// Selection + gather shared by the logit-driven quantizers.
pub(crate) fn select_rows<'g>(
    logits: &DiffTensor<'g>,
    codebook: &DiffTensor<'g>,
    schedule: &mut TemperatureSchedule,
    gumbel: GumbelMode,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(DiffTensor<'g>, Vec<usize>), QuantizerError> {
    let selection = match mode {
        Mode::Train => gumbel_softmax_sample(logits, schedule.temperature(), gumbel, rng)?,
        Mode::Eval => gumbel_softmax_sample(logits, schedule.temperature(), GumbelMode::Eval, rng)?,
    };
    let indices = argmax_rows(&selection.value());
    let z_q = selection.matmul(codebook)?;
    if mode == Mode::Train {
        schedule.advance();
    }
    Ok((z_q, indices))
}

pub(crate) fn normal_init(rng: &mut dyn RngCore, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches data")
}

/// Gumbel vector quantization: linear logits over a free embedding matrix.
#[derive(Clone, Debug)]
pub struct GumbelVq {
    num_codes: usize,
    dim: usize,
    weight: ParamId,
    bias: ParamId,
    embedding: ParamId,
    schedule: TemperatureSchedule,
    gumbel: GumbelMode,
}

impl GumbelVq {
    pub fn new(
        store: &mut ParamStore,
        num_codes: usize,
        dim: usize,
        schedule: TemperatureSchedule,
        gumbel: GumbelMode,
        rng: &mut dyn RngCore,
    ) -> Self {
        let std = (1.0 / dim as f64).sqrt();
        let weight = store.add(format!("{PARAM_PREFIX}proj_weight"), normal_init(rng, &[dim, num_codes], std));
        let bias = store.add(format!("{PARAM_PREFIX}proj_bias"), Tensor::zeros(&[num_codes]));
        let embedding = store.add(format!("{PARAM_PREFIX}embedding"), normal_init(rng, &[num_codes, dim], std));
        Self { num_codes, dim, weight, bias, embedding, schedule, gumbel }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }
}

impl Quantizer for GumbelVq {
    fn kind(&self) -> QuantizerKind {
        QuantizerKind::GumbelVq
    }

    fn num_codes(&self) -> usize {
        self.num_codes
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn forward<'g>(
        &mut self,
        z_e: &DiffTensor<'g>,
        params: &Bindings<'g, '_>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<QuantizeResult<'g>, QuantizerError> {
        check_rows(z_e, self.dim)?;
        let logits = z_e.matmul(&params.var(self.weight))?.add(&params.var(self.bias))?;
        let (z_q, indices) =
            select_rows(&logits, &params.var(self.embedding), &mut self.schedule, self.gumbel, mode, rng)?;
        Ok(QuantizeResult {
            z_q,
            usage_counts: usage_counts(&indices, self.num_codes),
            indices,
            logits: Some(logits),
            aux_loss: zero_loss(params),
        })
    }

    fn codebook(&self, store: &ParamStore) -> Result<Tensor, QuantizerError> {
        Ok(store.get(self.embedding).clone())
    }

    fn schedule(&self) -> Option<&TemperatureSchedule> {
        Some(&self.schedule)
    }
}
