//! Named parameter storage shared by trunks and augmentation layers.
//!
//! Parameters live outside any tape as plain buffers; each forward pass
//! binds them onto a fresh tape through a [`Session`]. The role tag drives
//! the optimizer: trunk parameters get weight decay, augmentation weights
//! and magnitudes never do, and magnitudes are clamped to [0, 1] after
//! every step. `State` entries (batch-norm running statistics) are carried
//! along but never optimized.

use crate::tensor::{Gradients, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Trunk weight/bias/BN-affine: optimized, weight-decayed.
    Trunk,
    /// Hidden transform weights w' of an augmentation layer.
    AugWeight,
    /// Transform magnitudes mu, projected into [0, 1] after each step.
    AugMagnitude,
    /// Non-optimized state (running statistics).
    State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub role: ParamRole,
}

/// Flat, ordered collection of named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>, role: ParamRole) -> ParamId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "parameter data does not match shape");
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data,
            role,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) {
        assert_eq!(data.len(), self.entries[id.0].data.len());
        self.entries[id.0].data = data;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamEntry)> {
        self.entries
            .iter_mut()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    /// Count of optimizable scalars (everything except `State`).
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role != ParamRole::State)
            .map(|e| e.data.len())
            .sum()
    }

    pub fn tensor(&self, id: ParamId) -> Tensor {
        let e = &self.entries[id.0];
        Tensor::from_vec(&e.shape, e.data.clone())
    }
}

/// One forward/backward pass: a tape plus the parameter bindings on it.
///
/// In train mode parameters bind as differentiable leaves; in eval mode they
/// bind as constants, so nothing is recorded and evaluation stays cheap.
pub struct Session<'a> {
    pub tape: Tape,
    pub store: &'a mut ParamStore,
    train: bool,
    bound: Vec<Option<Tensor>>,
}

impl<'a> Session<'a> {
    pub fn train(store: &'a mut ParamStore) -> Session<'a> {
        let n = store.len();
        Session {
            tape: Tape::new(),
            store,
            train: true,
            bound: vec![None; n],
        }
    }

    pub fn eval(store: &'a mut ParamStore) -> Session<'a> {
        let n = store.len();
        Session {
            tape: Tape::new(),
            store,
            train: false,
            bound: vec![None; n],
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// The tape tensor for a parameter, binding it on first use.
    pub fn param(&mut self, id: ParamId) -> Tensor {
        if let Some(t) = &self.bound[id.0] {
            return t.clone();
        }
        let value = self.store.tensor(id);
        let bound = if self.train && self.store.entry(id).role != ParamRole::State {
            self.tape.leaf(value)
        } else {
            value
        };
        self.bound[id.0] = Some(bound.clone());
        bound
    }

    /// Write back updated state (running statistics) during a forward pass.
    pub fn update_state(&mut self, id: ParamId, data: Vec<f64>) {
        debug_assert_eq!(self.store.entry(id).role, ParamRole::State);
        self.store.set_data(id, data);
    }

    /// Per-parameter gradients after a backward pass on this session's tape.
    pub fn gradients(&self, grads: &Gradients) -> Vec<(ParamId, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, slot) in self.bound.iter().enumerate() {
            if let Some(t) = slot {
                if t.is_tracked() {
                    out.push((ParamId(i), grads.get_or_zeros(t)));
                }
            }
        }
        out
    }
}
