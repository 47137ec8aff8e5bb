use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::numerics::tape::{Gradients, Tape, Var};
use crate::numerics::tensor::Tensor;

/// Named parameter tensors in a deterministic (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ParamStore { tensors }
    }

    /// Bit-exact equality of every tensor.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }
}

/// Lazily places parameters on a tape, once each.
///
/// Names starting with a frozen prefix enter as constants, so they never
/// receive gradients.
pub struct Binder<'a> {
    store: &'a ParamStore,
    bound: HashMap<String, Var>,
    frozen: Vec<String>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder {
            store,
            bound: HashMap::new(),
            frozen: Vec::new(),
        }
    }

    pub fn freeze_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.frozen.push(prefix.into());
        self
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?;
        let v = if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            tape.constant(t)
        } else {
            tape.param(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bound.iter()
    }

    /// Gradients of every parameter in the store; unbound or frozen ones are zero.
    pub fn collect_grads(&self, tape: &Tape, grads: &mut Gradients) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, t) in self.store.iter() {
            let g = self
                .bound
                .get(name)
                .filter(|v| tape.needs_grad(**v))
                .and_then(|v| grads.take(*v))
                .unwrap_or_else(|| vec![0.0; t.numel()]);
            out.insert(name.clone(), g);
        }
        out
    }
}
