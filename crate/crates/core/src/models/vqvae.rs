use rand::RngCore;

use super::checkpoint::Checkpoint;
use super::layers::Conv2d;
use super::ModelError;
use crate::diffcore::{AdamState, Bindings, DiffError, DiffTensor, Graph, ParamStore, Tensor};
use crate::metrics::perplexity;
use crate::quantizers::{build, Mode, QuantizeResult, Quantizer, QuantizerConfig};

/// Shape of the convolutional autoencoder around the quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub res_blocks: usize,
    pub latent_dim: usize,
    /// Number of stride-2 stages; the spatial downsampling factor is `2^stages`.
    pub stages: usize,
}

impl AutoencoderConfig {
    /// Single-channel 28×28 input, 16 hidden channels, latent dimension 3, downsampling 4.
    pub fn mnist() -> Self {
        Self { channels: 1, height: 28, width: 28, hidden: 16, res_blocks: 2, latent_dim: 3, stages: 2 }
    }

    pub fn downsample(&self) -> usize {
        1 << self.stages
    }

    /// Spatial size `(H', W')` of the latent grid.
    pub fn latent_hw(&self) -> (usize, usize) {
        (self.height / self.downsample(), self.width / self.downsample())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let f = self.downsample();
        if [self.channels, self.hidden, self.latent_dim, self.stages].contains(&0) {
            return Err(ModelError::Config(format!("zero-sized autoencoder {self:?}")));
        }
        if self.height % f != 0 || self.width % f != 0 {
            return Err(ModelError::Config(format!("{}x{} is not divisible by {f}", self.height, self.width)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv3: Conv2d,
    conv1: Conv2d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            conv3: Conv2d::new(store, &format!("{name}.conv3"), hidden, hidden, 3, 1, 1, false, rng),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), hidden, hidden, 1, 1, 0, false, rng),
        }
    }

    fn forward<'g>(&self, x: &DiffTensor<'g>, p: &Bindings<'g, '_>) -> Result<DiffTensor<'g>, DiffError> {
        let h = self.conv3.forward(&x.relu(), p)?.relu();
        x.add(&self.conv1.forward(&h, p)?)
    }
}

/// Strided convolutions, residual stack, then a 1×1 projection to the latent dimension.
#[derive(Clone, Debug)]
pub struct Encoder {
    downs: Vec<Conv2d>,
    blocks: Vec<ResBlock>,
    to_latent: Conv2d,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &AutoencoderConfig, rng: &mut dyn RngCore) -> Self {
        let downs = (0..cfg.stages)
            .map(|i| {
                let input = if i == 0 { cfg.channels } else { cfg.hidden };
                Conv2d::new(store, &format!("encoder.down{i}"), input, cfg.hidden, 4, 2, 1, false, rng)
            })
            .collect();
        let blocks =
            (0..cfg.res_blocks).map(|i| ResBlock::new(store, &format!("encoder.res{i}"), cfg.hidden, rng)).collect();
        let to_latent = Conv2d::new(store, "encoder.to_latent", cfg.hidden, cfg.latent_dim, 1, 1, 0, false, rng);
        Self { downs, blocks, to_latent }
    }

    /// `(B, C, H, W)` images to a `(B, d, H', W')` latent grid.
    pub fn forward<'g>(&self, x: &DiffTensor<'g>, p: &Bindings<'g, '_>) -> Result<DiffTensor<'g>, DiffError> {
        let mut h = *x;
        for conv in &self.downs {
            h = conv.forward(&h, p)?.relu();
        }
        for block in &self.blocks {
            h = block.forward(&h, p)?;
        }
        self.to_latent.forward(&h.relu(), p)
    }
}

/// Mirror of [`Encoder`] with transposed convolutions for upsampling.
#[derive(Clone, Debug)]
pub struct Decoder {
    from_latent: Conv2d,
    blocks: Vec<ResBlock>,
    ups: Vec<Conv2d>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &AutoencoderConfig, rng: &mut dyn RngCore) -> Self {
        let from_latent = Conv2d::new(store, "decoder.from_latent", cfg.latent_dim, cfg.hidden, 3, 1, 1, false, rng);
        let blocks =
            (0..cfg.res_blocks).map(|i| ResBlock::new(store, &format!("decoder.res{i}"), cfg.hidden, rng)).collect();
        let ups = (0..cfg.stages)
            .map(|i| {
                let output = if i + 1 == cfg.stages { cfg.channels } else { cfg.hidden };
                Conv2d::new(store, &format!("decoder.up{i}"), cfg.hidden, output, 4, 2, 1, true, rng)
            })
            .collect();
        Self { from_latent, blocks, ups }
    }

    pub fn forward<'g>(&self, z: &DiffTensor<'g>, p: &Bindings<'g, '_>) -> Result<DiffTensor<'g>, DiffError> {
        let mut h = self.from_latent.forward(z, p)?;
        for block in &self.blocks {
            h = block.forward(&h, p)?;
        }
        h = h.relu();
        let last = self.ups.len() - 1;
        for (i, conv) in self.ups.iter().enumerate() {
            h = conv.forward(&h, p)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// `(B, d, h, w)` grid to `(B·h·w, d)` rows, position-major within each image.
pub(crate) fn grid_to_rows<'g>(z: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
    let s = z.shape();
    z.permute(&[0, 2, 3, 1])?.reshape(&[s[0] * s[2] * s[3], s[1]])
}

pub(crate) fn rows_to_grid<'g>(
    rows: &DiffTensor<'g>,
    batch: usize,
    h: usize,
    w: usize,
) -> Result<DiffTensor<'g>, DiffError> {
    let d = rows.shape()[1];
    rows.reshape(&[batch, h, w, d])?.permute(&[0, 3, 1, 2])
}

/// Per-position latents of one evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    /// Pre-quantization rows, `(n·h·w) × d` row-major.
    pub z_e: Vec<f64>,
    pub z_q: Vec<f64>,
    pub indices: Vec<usize>,
    pub positions_per_image: usize,
}

/// Losses and usage of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub recon: f64,
    pub aux: f64,
    pub perplexity: f64,
    pub temperature: Option<f64>,
}

/// Encoder, quantizer and decoder sharing one parameter store.
pub struct VqVae {
    pub config: AutoencoderConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub quantizer: Box<dyn Quantizer>,
    step: u64,
}

/// Output of one recorded forward pass.
struct Forward<'g> {
    input: DiffTensor<'g>,
    z_e: DiffTensor<'g>,
    reconstruction: DiffTensor<'g>,
    quantized: QuantizeResult<'g>,
}

impl VqVae {
    pub fn new(config: AutoencoderConfig, qcfg: &QuantizerConfig, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        config.validate()?;
        if qcfg.dim != config.latent_dim {
            return Err(ModelError::Config(format!(
                "quantizer dimension {} differs from latent dimension {}",
                qcfg.dim, config.latent_dim
            )));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config, rng);
        let quantizer = build(qcfg, &mut store, rng)?;
        let decoder = Decoder::new(&mut store, &config, rng);
        Ok(Self { config, store, encoder, decoder, quantizer, step: 0 })
    }

    /// Number of completed training steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 4 || s[1] != c.channels || s[2] != c.height || s[3] != c.width {
            return Err(ModelError::Shape(format!(
                "expected (B, {}, {}, {}), got {s:?}",
                c.channels, c.height, c.width
            )));
        }
        Ok(())
    }

    /// All parameters with the step count recorded as metadata.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.store.to_named()).with_meta("step", self.step)
    }

    /// Overwrites every parameter from `ckpt`; names and shapes must match.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), ModelError> {
        self.store.load_named(&ckpt.tensors)?;
        self.step = ckpt.meta("step").and_then(|s| s.parse().ok()).unwrap_or(0);
        Ok(())
    }

    /// Pre-quantization `(B, d, H', W')` latent grid.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let graph = Graph::new();
        let params = Bindings::new(&graph, &self.store);
        Ok(self.encoder.forward(&graph.constant(x.clone()), &params)?.value().as_ref().clone())
    }

    /// Decodes a `(B, d, H', W')` grid to images.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        let (h, w) = self.config.latent_hw();
        let s = z.shape();
        if s.len() != 4 || s[1] != self.config.latent_dim || s[2] != h || s[3] != w {
            return Err(ModelError::Shape(format!("expected (B, {}, {h}, {w}), got {s:?}", self.config.latent_dim)));
        }
        let graph = Graph::new();
        let params = Bindings::new(&graph, &self.store);
        Ok(self.decoder.forward(&graph.constant(z.clone()), &params)?.value().as_ref().clone())
    }

    /// Evaluation-mode reconstruction and per-position latents.
    pub fn evaluate(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Result<(Tensor, Embeddings), ModelError> {
        self.check_input(x)?;
        let graph = Graph::new();
        let Self { config, store, encoder, decoder, quantizer, .. } = self;
        let params = Bindings::new(&graph, store);
        let out = run(config, encoder, decoder, quantizer.as_mut(), &graph, &params, x, Mode::Eval, rng)?;
        let (h, w) = config.latent_hw();
        let recon = out.reconstruction.value().as_ref().clone();
        Ok((
            recon,
            Embeddings {
                dim: config.latent_dim,
                z_e: grid_to_rows(&out.z_e)?.value().data().to_vec(),
                z_q: out.quantized.z_q.value().data().to_vec(),
                indices: out.quantized.indices,
                positions_per_image: h * w,
            },
        ))
    }

    /// Evaluation-mode reconstruction of `x`.
    pub fn reconstruct(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor, ModelError> {
        Ok(self.evaluate(x, rng)?.0)
    }

    /// Quantized `(B, d, h, w)` grid in evaluation mode.
    pub fn quantized_grid(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let batch = x.shape()[0];
        let (h, w) = self.config.latent_hw();
        let graph = Graph::new();
        let Self { store, encoder, quantizer, .. } = self;
        let params = Bindings::new(&graph, store);
        let z = encoder.forward(&graph.constant(x.clone()), &params)?;
        let q = quantizer.forward(&grid_to_rows(&z)?, &params, Mode::Eval, rng)?;
        Ok(rows_to_grid(&q.z_q, batch, h, w)?.value().as_ref().clone())
    }
}

#[allow(clippy::too_many_arguments)]
fn run<'g>(
    config: &AutoencoderConfig,
    encoder: &Encoder,
    decoder: &Decoder,
    quantizer: &mut dyn Quantizer,
    graph: &'g Graph,
    params: &Bindings<'g, '_>,
    x: &Tensor,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Forward<'g>, ModelError> {
    let batch = x.shape()[0];
    let (h, w) = config.latent_hw();
    let input = graph.constant(x.clone());
    let z_e = encoder.forward(&input, params)?;
    let quantized = quantizer.forward(&grid_to_rows(&z_e)?, params, mode, rng)?;
    let reconstruction = decoder.forward(&rows_to_grid(&quantized.z_q, batch, h, w)?, params)?;
    Ok(Forward { input, z_e, reconstruction, quantized })
}

/// One optimisation step on `MSE(x, decode(z_q)) + aux`.
pub fn vqvae_step(
    model: &mut VqVae,
    adam: &mut AdamState,
    batch: &Tensor,
    rng: &mut dyn RngCore,
) -> Result<StepRecord, ModelError> {
    model.check_input(batch)?;
    let temperature = model.quantizer.schedule().map(|s| s.temperature());
    let step = model.step;
    let graph = Graph::new();
    let VqVae { config, store, encoder, decoder, quantizer, .. } = model;
    let (grads, loss, recon, aux, usage) = {
        let params = Bindings::new(&graph, store);
        let out = run(config, encoder, decoder, quantizer.as_mut(), &graph, &params, batch, Mode::Train, rng)?;
        let recon = out.reconstruction.mse(&out.input)?;
        let loss = recon.add(&out.quantized.aux_loss)?;
        let (recon_v, aux_v) = (recon.item(), out.quantized.aux_loss.item());
        if !loss.item().is_finite() {
            return Err(ModelError::NonFinite { step, recon: recon_v, aux: aux_v });
        }
        graph.backward(loss)?;
        let grads = params.gradients();
        if !grads.is_finite() {
            return Err(ModelError::NonFinite { step, recon: recon_v, aux: aux_v });
        }
        (grads, loss.item(), recon_v, aux_v, perplexity(&out.quantized.usage_counts).unwrap_or(f64::NAN))
    };
    adam.step(store, &grads)?;
    quantizer.after_step(store, rng)?;
    model.step += 1;
    Ok(StepRecord { step, loss, recon, aux, perplexity: usage, temperature })
}
