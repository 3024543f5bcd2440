//! Named parameter storage.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable tensors in insertion order, addressable by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            bail!(Contract, "duplicate parameter {name}");
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i]).ok_or_else(|| missing(name))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(missing(name)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Records every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound<'_, T> {
        self.bind_with(g, true)
    }

    /// Records every parameter as a constant; nothing is kept for a reverse
    /// sweep.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound<'_, T> {
        self.bind_with(g, false)
    }

    /// Wraps leaves that were already recorded, one per parameter in store
    /// order (for example by a finite-difference harness).
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound<'_, T>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::Contract(format!("{} vars for {} parameters", vars.len(), self.tensors.len())));
        }
        Ok(Bound { store: self, vars })
    }

    fn bind_with(&self, g: &mut Graph<T>, grad: bool) -> Bound<'_, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let mut leaf = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
                leaf.set_requires_grad(grad);
                g.input(leaf)
            })
            .collect();
        Bound { store: self, vars }
    }

    /// Adds the gradients of a sweep into each parameter's accumulator.
    pub fn absorb_grads(&mut self, grads: &Gradients<T>, bound: &[Var]) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(bound) {
            if let Some(g) = grads.get(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

fn missing(name: &str) -> Error {
    Error::Contract(format!("unknown parameter {name}"))
}

/// Parameters of a store recorded into one graph.
pub struct Bound<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<T: Scalar> Bound<'_, T> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.store.index.get(name).map(|&i| self.vars[i]).ok_or_else(|| missing(name))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
