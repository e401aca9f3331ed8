//! Named trainable tensors and per-step binding into a [`Graph`].

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::optim::{adam_step, AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which optimizer family a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Canonical Gaussian parameters (Adam).
    Field,
    /// Hash-grid feature tables (Adam).
    HashTable,
    /// MLP weights and biases (AdamW).
    Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub state: OptimizerState,
}

/// Owns every trainable tensor together with its optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor, lr: f64) -> ParamId {
        let hyper = match group {
            ParamGroup::Network => AdamConfig::adamw(lr),
            ParamGroup::Field | ParamGroup::HashTable => AdamConfig::adam(lr),
        };
        let state = OptimizerState::new(value.len(), hyper);
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            value,
            state,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Applies one optimizer step to every parameter that has a gradient.
    /// Returns the number of parameter tensors updated.
    pub fn step(&mut self, grads: &Gradients) -> Result<usize> {
        if grads.0.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.0.len(),
                self.entries.len()
            )));
        }
        for (entry, g) in self.entries.iter().zip(&grads.0) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", entry.name)));
                }
            }
        }
        let mut updated = 0;
        for (entry, g) in self.entries.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                adam_step(entry.value.data_mut(), g.data(), &mut entry.state)?;
                updated += 1;
            }
        }
        Ok(updated)
    }
}

/// Gradients of the trainable parameters of a finished session, indexed
/// like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.0).and_then(|g| g.as_ref())
    }
}

/// One forward/backward pass: a fresh [`Graph`] plus lazily bound parameters.
pub struct Session<'s> {
    pub graph: Graph,
    store: &'s ParamStore,
    vars: Vec<Option<Var>>,
    trainable: Vec<bool>,
}

impl<'s> Session<'s> {
    /// A session in which only parameters selected by `trainable` receive gradients.
    pub fn new(store: &'s ParamStore, trainable: impl Fn(&ParamEntry) -> bool) -> Self {
        let flags = store.entries.iter().map(&trainable).collect();
        Self {
            graph: Graph::new(),
            store,
            vars: vec![None; store.entries.len()],
            trainable: flags,
        }
    }

    /// A session where nothing is trainable.
    pub fn inference(store: &'s ParamStore) -> Self {
        Self::new(store, |_| false)
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// The graph node for a parameter, binding it on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable[id.0] {
            self.graph.param(value)
        } else {
            self.graph.constant(value)
        };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Releases the store borrow, keeping only trainable gradients.
    pub fn into_gradients(self) -> Gradients {
        Gradients(
            self.vars
                .iter()
                .zip(&self.trainable)
                .map(|(v, &t)| match v {
                    Some(v) if t => self.graph.grad(*v).cloned(),
                    _ => None,
                })
                .collect(),
        )
    }
}
