use indexmap::IndexMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{MptError, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StoreMeta {
    pub config_hash: u64,
    pub seed: u64,
    pub step: u64,
    /// Resolved configuration as key=value text.
    pub config_text: String,
}

/// Named learnable tensors in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T: Element = f32> {
    params: IndexMap<String, Tensor<T>>,
    pub meta: StoreMeta,
}

impl<T: Element> Default for ParameterStore<T> {
    fn default() -> Self {
        ParameterStore {
            params: IndexMap::new(),
            meta: StoreMeta::default(),
        }
    }
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(MptError::invalid("parameter_store", format!("duplicate name {}", name)));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| MptError::invalid("parameter_store", format!("missing parameter {}", name)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Every parameter as a tracked leaf on `tape`.
    pub fn leaves<'t>(&self, tape: &'t Tape<T>) -> Params<'t, T> {
        Params {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Parameters bound to a tape for one forward pass.
pub struct Params<'t, T: Element = f32> {
    vars: IndexMap<String, Var<'t, T>>,
}

impl<'t, T: Element> Params<'t, T> {
    /// Binds already-created variables to names, in order.
    pub fn from_vars<S: Into<String>>(entries: impl IntoIterator<Item = (S, Var<'t, T>)>) -> Self {
        Params {
            vars: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Var<'t, T>> {
        self.vars
            .get(name)
            .ok_or_else(|| MptError::invalid("params", format!("missing parameter {}", name)))
    }

    pub fn opt(&self, name: &str) -> Option<&Var<'t, T>> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<'t, T>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradient for every parameter; zeros where the loss does not reach.
    pub fn collect_grads(&self, grads: &Gradients<T>) -> IndexMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(v)))
            .collect()
    }
}
