use serde::{Deserialize, Serialize};

use crate::autograd::{BatchStats, Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Weight,
    /// Running statistics; updated from forward passes.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Named flat storage for every tensor a model owns.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            value,
        });
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

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Trainable parameters whose names start with `prefix`.
    pub fn weights_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == ParamKind::Weight && e.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn num_weights(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Overwrite values from another store with identical layout.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub(crate) fn from_entries(entries: Vec<ParamEntry>) -> Self {
        ParamStore { entries }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh graph plus lazily bound parameters.
pub struct Session<'s> {
    pub graph: Graph,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    stats: Vec<(ParamId, ParamId, BatchStats)>,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Graph node holding parameter `id`, inserted on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = match self.store.entry(id).kind {
            ParamKind::Weight => self.graph.leaf(t),
            ParamKind::Buffer => self.graph.constant(t),
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub(crate) fn record_stats(&mut self, mean: ParamId, var: ParamId, stats: BatchStats) {
        self.stats.push((mean, var, stats));
    }

    /// Back-propagate `loss` and collect gradients for the bound weights.
    pub fn gradients(&self, loss: Var) -> Result<ParamGrads> {
        let mut g = self.graph.backward(loss)?;
        Ok(self.collect(&mut g))
    }

    fn collect(&self, g: &mut Gradients) -> ParamGrads {
        let mut out = Vec::new();
        for (i, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(t) = g.take(*v) {
                    out.push((ParamId(i), t));
                }
            }
        }
        ParamGrads(out)
    }

    /// Batch statistics recorded by training-mode batch norms, as
    /// `(running_mean id, running_var id, stats)`.
    pub fn into_batch_stats(self) -> Vec<(ParamId, ParamId, BatchStats)> {
        self.stats
    }
}

/// Gradients keyed by parameter.
#[derive(Debug, Default)]
pub struct ParamGrads(pub Vec<(ParamId, Tensor)>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    /// Keep only the given parameters.
    pub fn restrict(self, ids: &[ParamId]) -> ParamGrads {
        ParamGrads(self.0.into_iter().filter(|(p, _)| ids.contains(p)).collect())
    }
}

/// Fold recorded batch statistics into running buffers (exponential average,
/// unbiased variance).
pub fn apply_batch_stats(store: &mut ParamStore, stats: &[(ParamId, ParamId, BatchStats)], momentum: f64) {
    for (mean_id, var_id, s) in stats {
        let correction = if s.count > 1 {
            s.count as f64 / (s.count - 1) as f64
        } else {
            1.0
        };
        for (r, b) in store.get_mut(*mean_id).data_mut().iter_mut().zip(&s.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in store.get_mut(*var_id).data_mut().iter_mut().zip(&s.var) {
            *r = (1.0 - momentum) * *r + momentum * b * correction;
        }
    }
}
