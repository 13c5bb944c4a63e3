//! Named parameter registry, per-step binding into a graph, and seeded
//! initialization.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name}")))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {name} has shape {:?}, got {:?}",
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Sets to zero every parameter whose name satisfies `pred`.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, value) in self.names.iter().zip(&mut self.values) {
            if pred(name) {
                value.data_mut().fill(0.0);
            }
        }
    }

    /// Leaves for every parameter in `g` (constants when `g` is not recording).
    pub fn bind(&self, g: &Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.leaf(v.clone())).collect(),
        }
    }
}

/// Parameters bound into one graph, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    /// Wraps vars given in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    /// Gradients in store order; parameters the loss does not reach get zeros.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|v| grads.take(v).unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }

    /// Like [`Bound::gradients`] but `None` where no gradient arrived.
    pub fn reached(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| grads.get(v).cloned()).collect()
    }
}

/// Registers parameters under a dotted name prefix, drawing initial values
/// from a seeded generator.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// A builder whose names are prefixed with `name.`.
    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        Builder {
            prefix: self.full_name(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn tensor(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let name = self.full_name(name);
        self.store.insert(name, value)
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let value = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.tensor(name, value)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.tensor(name, Tensor::full(shape, value))
    }
}
