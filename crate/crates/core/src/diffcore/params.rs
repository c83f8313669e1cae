//! Named parameter storage, per-graph bindings and the Adam optimizer.

use std::cell::RefCell;
use std::collections::BTreeMap;

use super::{DiffError, DiffTensor, Graph, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Owns every parameter of a model, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(Entry { name, value, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.trainable = trainable;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    /// Snapshot of all values keyed by name.
    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect()
    }

    /// Overwrites values from a named collection; every stored name must be present
    /// with a matching shape.
    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<(), DiffError> {
        for e in self.entries.iter_mut() {
            let t = named.get(&e.name).ok_or_else(|| DiffError::MissingParameter(e.name.clone()))?;
            if t.shape() != e.value.shape() {
                return Err(DiffError::Shape(format!(
                    "parameter {} has shape {:?}, stored {:?}",
                    e.name,
                    e.value.shape(),
                    t.shape()
                )));
            }
            e.value = t.clone();
        }
        Ok(())
    }
}

/// Lazily records parameters from a store as leaves of one graph.
pub struct Bindings<'g, 's> {
    graph: &'g Graph,
    store: &'s ParamStore,
    bound: RefCell<BTreeMap<ParamId, DiffTensor<'g>>>,
}

impl<'g, 's> Bindings<'g, 's> {
    pub fn new(graph: &'g Graph, store: &'s ParamStore) -> Self {
        Self { graph, store, bound: RefCell::new(BTreeMap::new()) }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// The graph leaf for parameter `id`; frozen parameters are recorded as constants.
    pub fn var(&self, id: ParamId) -> DiffTensor<'g> {
        *self
            .bound
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| self.graph.leaf(self.store.get(id).clone(), self.store.is_trainable(id)))
    }

    /// Collects parameter gradients after [`Graph::backward`].
    pub fn gradients(&self) -> Gradients {
        let grads = self.bound.borrow().iter().filter_map(|(&id, v)| v.grad().map(|g| (id, g))).collect();
        Gradients { grads }
    }
}

/// Parameter gradients of one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(&id, g)| (id, g))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// Largest absolute gradient entry across all parameters.
    pub fn max_abs(&self) -> f64 {
        self.grads.values().map(Tensor::max_abs).fold(0.0, f64::max)
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter.
    ///
    /// Every trainable parameter needs a gradient, and frozen parameters must not
    /// have one.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), DiffError> {
        for (id, _) in grads.iter() {
            if !store.is_trainable(id) {
                return Err(DiffError::FrozenGradient(store.name(id).to_string()));
            }
        }
        let trainable: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        for &id in &trainable {
            if grads.get(id).is_none() {
                return Err(DiffError::MissingGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in trainable {
            let g = grads.get(id).expect("checked above");
            let value = store.get_mut(id);
            let (m, v) = self.moments.entry(id).or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (((p, &gi), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
