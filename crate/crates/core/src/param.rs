//! Named parameter storage shared between layers, the tape and optimizers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `Weight` tensors are model parameters; `Buffer` tensors are running
/// statistics that are saved with the model but never optimized or counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    value: Arc<Vec<T>>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn values(&self) -> &[T] {
        &self.value
    }

    pub(crate) fn shared(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.value)
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Present only for trainable weights.
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn tensor(&self) -> Tensor<T> {
        Tensor::new(self.shape.clone(), self.value.to_vec()).expect("parameter shape")
    }
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for checkpoints, audits and optimizer state.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            by_name: self.by_name.clone(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed), params: Vec::new(), by_name: HashMap::new() }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        kind: ParamKind,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        let shape = value.shape().to_vec();
        let data = value.into_data();
        let grad = (trainable && kind == ParamKind::Weight).then(|| vec![T::zero(); data.len()]);
        let id = ParamId(self.params.len());
        self.params.push(Parameter { name: name.clone(), shape, kind, value: Arc::new(data), grad });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn weight(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        self.add(name, value, ParamKind::Weight, trainable)
    }

    pub fn buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.add(name, value, ParamKind::Buffer, false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.requires_grad()).map(|(id, _)| id).collect()
    }

    /// Mutable view of a parameter's values. Copies on write if a tape still
    /// holds a reference to the current buffer.
    pub fn values_mut(&mut self, id: ParamId) -> &mut [T] {
        Arc::make_mut(&mut self.params[id.0].value).as_mut_slice()
    }

    pub fn set_values(&mut self, id: ParamId, values: &[T]) -> Result<()> {
        let p = &self.params[id.0];
        if values.len() != p.numel() {
            return Err(Error::dim(format!(
                "parameter {:?} has shape {:?} ({} values), got {}",
                p.name,
                p.shape,
                p.numel(),
                values.len()
            )));
        }
        self.values_mut(id).copy_from_slice(values);
        Ok(())
    }

    /// Simultaneous mutable access to a parameter's values and its gradient.
    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> Option<(&mut [T], &mut [T])> {
        let p = &mut self.params[id.0];
        let grad = p.grad.as_mut()?;
        Some((Arc::make_mut(&mut p.value).as_mut_slice(), grad.as_mut_slice()))
    }

    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut [T]> {
        self.params[id.0].grad.as_deref_mut()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[T]) -> Result<()> {
        let p = &mut self.params[id.0];
        match p.grad.as_mut() {
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a = *a + x;
                }
                Ok(())
            }
            None => Err(Error::contract(format!("parameter {:?} does not require grad", p.name))),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    /// Drops gradient buffers so no tensor in the store requires grad.
    pub fn freeze(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Cheap copy of every value buffer (reference-counted).
    pub fn snapshot(&self) -> Vec<Arc<Vec<T>>> {
        self.params.iter().map(Parameter::shared).collect()
    }

    pub fn restore(&mut self, snapshot: &[Arc<Vec<T>>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::contract("snapshot does not match parameter store"));
        }
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            if s.len() != p.numel() {
                return Err(Error::dim(format!("snapshot entry for {:?} has wrong length", p.name)));
            }
            p.value = Arc::clone(s);
        }
        Ok(())
    }

    pub fn count(&self, pred: impl Fn(&Parameter<T>) -> bool) -> usize {
        self.params.iter().filter(|p| pred(p)).map(|p| numel(&p.shape)).sum()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }
}
