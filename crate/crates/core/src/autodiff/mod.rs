//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive in execution order. [`Graph::backward`]
//! replays the record in reverse, visiting each primitive exactly once, and
//! accumulates gradients additively across fan-out.

use std::any::Any;

use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod attention;
mod conv;
mod elementwise;
mod linalg;
mod norm;
mod pool;
mod shape;

pub use attention::{AttentionKind, AttentionProbs};
pub use conv::BandFilters;
pub(crate) use elementwise::any_impl;
pub(crate) use elementwise::logistic as elementwise_logistic;
pub use pool::pooled;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded primitive.
pub(crate) trait Backward<T: Scalar>: Any {
    fn name(&self) -> &'static str;

    /// Gradients w.r.t. each input given the output gradient. Entries whose
    /// `needs` flag is false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;

    fn as_any(&self) -> &dyn Any;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

/// The computation record.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It participates in differentiation iff the tensor's
    /// `requires_grad` flag is set.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, inputs: Vec::new(), op: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that always requires a gradient.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.input(tensor.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, op: impl Backward<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Backward<T>>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.nodes.push(Node { value, inputs, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Like [`Graph::push`] but keeps the backward record even when no input
    /// requires a gradient, so saved state stays inspectable.
    pub(crate) fn push_kept(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<Var>,
        op: impl Backward<T>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, inputs, op: Some(Box::new(op)), requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn op_state<O: 'static>(&self, v: Var) -> Option<&O> {
        self.nodes[v.0].op.as_ref().and_then(|op| op.as_any().downcast_ref::<O>())
    }

    /// Name of the primitive that produced `v`, if any was recorded.
    pub fn op_name(&self, v: Var) -> Option<&'static str> {
        self.nodes[v.0].op.as_ref().map(|op| op.name())
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.numel() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, &g, &needs);
            visited.push(Var(i));
            for ((var, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                let (true, Some(ig)) = (*need, ig) else { continue };
                if let Some(pos) = ig.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient from {} at element {pos}",
                        op.name()
                    )));
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        // Leaves keep their gradients; intermediates were consumed above.
        Ok(Gradients { grads, visited })
    }
}

/// Result of a reverse sweep. Holds gradients of every leaf that requires one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    visited: Vec<Var>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf. `None` when no path from the loss reached it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a leaf, zeros when unreached.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); len])
    }

    /// Primitives replayed during the sweep, in visiting order.
    pub fn visited(&self) -> &[Var] {
        &self.visited
    }
}
