use rand::RngCore;

use super::layers::{Conv2d, Linear};
use super::vqvae::{grid_to_rows, rows_to_grid, VqVae};
use super::ModelError;
use crate::diffcore::{AdamState, Bindings, DiffTensor, Graph, ParamStore, Tensor};
use crate::quantizers::Mode;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub latent_dim: usize,
    pub conv_channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ClassifierConfig {
    pub fn new(latent_dim: usize, classes: usize) -> Self {
        Self { latent_dim, conv_channels: 32, hidden: 64, classes }
    }
}

/// Conv + ReLU, global average pooling, then two fully connected layers.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    conv: Conv2d,
    fc1: Linear,
    fc2: Linear,
}

/// Loss and accuracy of one head update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierRecord {
    pub loss: f64,
    pub accuracy: f64,
}

impl ClassifierHead {
    pub fn new(config: ClassifierConfig, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        let c = &config;
        if [c.latent_dim, c.conv_channels, c.hidden].contains(&0) || c.classes < 2 {
            return Err(ModelError::Config(format!("invalid classifier {c:?}")));
        }
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "head.conv", c.latent_dim, c.conv_channels, 3, 1, 1, false, rng);
        let fc1 = Linear::new(&mut store, "head.fc1", c.conv_channels, c.hidden, rng);
        let fc2 = Linear::new(&mut store, "head.fc2", c.hidden, c.classes, rng);
        Ok(Self { config, store, conv, fc1, fc2 })
    }

    /// `(B, classes)` logits for a `(B, d, h, w)` code grid.
    pub fn forward<'g>(&self, grid: &DiffTensor<'g>, p: &Bindings<'g, '_>) -> Result<DiffTensor<'g>, ModelError> {
        let s = grid.shape();
        if s.len() != 4 || s[1] != self.config.latent_dim {
            return Err(ModelError::Shape(format!("head expects (B, {}, h, w), got {s:?}", self.config.latent_dim)));
        }
        let (b, ch) = (s[0], self.config.conv_channels);
        let h = self.conv.forward(grid, p)?.relu();
        let pooled = h.reshape(&[b, ch, s[2] * s[3]])?.mean_axis(2)?.reshape(&[b, ch])?;
        let hidden = self.fc1.forward(&pooled, p)?.relu();
        Ok(self.fc2.forward(&hidden, p)?)
    }

    pub fn logits(&self, grid: &Tensor) -> Result<Tensor, ModelError> {
        let graph = Graph::new();
        let params = Bindings::new(&graph, &self.store);
        Ok(self.forward(&graph.constant(grid.clone()), &params)?.value().as_ref().clone())
    }

    pub fn predict(&self, grid: &Tensor) -> Result<Vec<usize>, ModelError> {
        Ok(argmax(&self.logits(grid)?))
    }

    /// One cross-entropy step on the head alone, given precomputed code grids.
    pub fn train_on_grid(
        &mut self,
        adam: &mut AdamState,
        grid: &Tensor,
        labels: &[usize],
    ) -> Result<ClassifierRecord, ModelError> {
        let graph = Graph::new();
        let params = Bindings::new(&graph, &self.store);
        let logits = self.forward(&graph.constant(grid.clone()), &params)?;
        let record = finish(&graph, &logits, labels)?;
        let grads = params.gradients();
        adam.step(&mut self.store, &grads)?;
        Ok(record)
    }
}

fn argmax(logits: &Tensor) -> Vec<usize> {
    (0..logits.shape()[0])
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn finish<'g>(graph: &'g Graph, logits: &DiffTensor<'g>, labels: &[usize]) -> Result<ClassifierRecord, ModelError> {
    let loss = logits.cross_entropy(labels)?;
    if !loss.item().is_finite() {
        return Err(ModelError::NonFinite { step: 0, recon: loss.item(), aux: 0.0 });
    }
    let predicted = argmax(&logits.value());
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    graph.backward(loss)?;
    Ok(ClassifierRecord { loss: loss.item(), accuracy: correct as f64 / labels.len().max(1) as f64 })
}

/// Marks every encoder, decoder and quantizer parameter non-trainable.
pub fn freeze_backbone(model: &mut VqVae) {
    for id in model.store.ids().collect::<Vec<_>>() {
        model.store.set_trainable(id, false);
    }
}

/// Trains the head on eval-mode quantized grids of `batch` with the backbone held fixed.
///
/// Fails unless every backbone parameter is frozen, and if any gradient reaches one.
pub fn classifier_step(
    model: &mut VqVae,
    head: &mut ClassifierHead,
    adam: &mut AdamState,
    batch: &Tensor,
    labels: &[usize],
    rng: &mut dyn RngCore,
) -> Result<ClassifierRecord, ModelError> {
    if let Some(id) = model.store.ids().find(|&id| model.store.is_trainable(id)) {
        return Err(ModelError::BackboneNotFrozen(model.store.name(id).to_string()));
    }
    let s = batch.shape();
    if s.len() != 4 || s[0] != labels.len() {
        return Err(ModelError::Shape(format!("batch {s:?} with {} labels", labels.len())));
    }
    let (h, w) = model.config.latent_hw();
    let graph = Graph::new();
    let backbone = Bindings::new(&graph, &model.store);
    let z_e = model.encoder.forward(&graph.constant(batch.clone()), &backbone)?;
    let q = model.quantizer.forward(&grid_to_rows(&z_e)?, &backbone, Mode::Eval, rng)?;
    let grid = rows_to_grid(&q.z_q, s[0], h, w)?;
    let params = Bindings::new(&graph, &head.store);
    let logits = head.forward(&grid, &params)?;
    let record = finish(&graph, &logits, labels)?;
    if let Some((id, _)) = backbone.gradients().iter().next() {
        return Err(ModelError::BackboneNotFrozen(model.store.name(id).to_string()));
    }
    let grads = params.gradients();
    adam.step(&mut head.store, &grads)?;
    Ok(record)
}
