//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive as it is evaluated. Node indices are
//! assigned in evaluation order, so replaying the tape backwards is a valid
//! topological order. Parameter leaves share the value buffer of their
//! [`ParamStore`] entry instead of copying it.

mod backward;
mod ops;

use std::sync::Arc;

pub use backward::Gradients;
pub use ops::attention_forward;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op<T> {
    Input,
    Param { store: u64, id: ParamId },
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Pow(Var, T),
    Clamp(Var, T, T),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    SliceLast { src: Var, start: usize },
    LayerNorm { src: Var, inv_std: Vec<T> },
    RmsNorm { src: Var, inv_rms: Vec<T> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Dropout { src: Var, mask: Vec<T> },
    Conv1d { x: Var, w: Var, b: Var, pad: usize },
    FeatureEmbed { x: Var, w: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, kv_heads: usize, head_dim: usize, probs: Vec<T> },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Arc<Vec<T>>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Pending write to a non-trainable buffer (BatchNorm running statistics),
/// produced during a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BufferUpdate<T> {
    pub store: u64,
    pub id: ParamId,
    pub values: Vec<T>,
}

/// The computation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    buffer_updates: Vec<BufferUpdate<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), buffer_updates: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and its intermediate values.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.buffer_updates.clear();
    }

    pub(crate) fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub(crate) fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.push_shared(shape, Arc::new(value), op, needs_grad)
    }

    pub(crate) fn push_shared(&mut self, shape: Vec<usize>, value: Arc<Vec<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that does not require a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Input, false)
    }

    /// Leaf whose gradient is tracked and reported by [`Graph::gradients`].
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Input, true)
    }

    /// Leaf bound to a stored parameter. Requires grad exactly when the
    /// parameter does.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push_shared(p.shape.clone(), p.shared(), Op::Param { store: store.uid(), id }, p.requires_grad())
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn record_buffer_update(&mut self, store: &ParamStore<T>, id: ParamId, values: Vec<T>) {
        self.buffer_updates.push(BufferUpdate { store: store.uid(), id, values });
    }

    /// Running-statistic updates recorded by training-mode forward passes.
    pub fn take_buffer_updates(&mut self) -> Vec<BufferUpdate<T>> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Back-propagates from a scalar and adds every parameter gradient into
    /// `store`. Gradients accumulate across calls until the caller zeroes them.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Param { store: uid, id } = node.op {
                if let Some(g) = grads.get(Var(i)) {
                    if uid != store.uid() {
                        return Err(Error::contract("tape holds a trainable parameter from a different store"));
                    }
                    store.accumulate_grad(id, g)?;
                }
            }
        }
        Ok(())
    }
}

impl<T: Real> ParamStore<T> {
    /// Applies running-statistic updates produced by `graph` for this store.
    pub fn apply_buffer_updates(&mut self, updates: Vec<BufferUpdate<T>>) -> Result<()> {
        for u in updates {
            if u.store == self.uid() {
                self.set_values(u.id, &u.values)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fdcheck;
