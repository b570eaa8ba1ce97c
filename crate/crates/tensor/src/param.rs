use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::invalid(
                "ParamStore::add",
                format!("duplicate parameter `{name}`"),
            ));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(TensorError::invalid(
                "ParamStore::assign_from",
                "parameter names differ",
            ));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(TensorError::shape("assign_from", dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (_, name, t) in self.iter() {
            t.check_finite(name)?;
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            bufs: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.bufs[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    pub fn add(&mut self, id: ParamId, grad: &[f64]) {
        match &mut self.bufs[id.0] {
            Some(buf) => buf.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in self.bufs.iter_mut().flatten() {
            buf.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs
            .iter()
            .flatten()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn has_non_finite(&self) -> bool {
        self.bufs
            .iter()
            .flatten()
            .any(|b| b.iter().any(|g| !g.is_finite()))
    }
}
