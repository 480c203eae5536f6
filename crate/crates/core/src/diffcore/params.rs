use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{DiffError, Result, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in a stable (sorted) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        self.params.insert(name, Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).map(|p| &p.tensor).ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }

    /// Sets the trainable flag of every parameter whose name starts with `prefix`.
    /// Returns how many parameters matched. Meant for configuring a regime
    /// before training starts; optimizers never change the flag.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
                n += 1;
            }
        }
        n
    }

    /// Moves every parameter of `other` into `self`.
    pub fn extend(&mut self, other: ParamSet<T>) -> Result<()> {
        for (name, p) in other.params {
            self.insert(name, p.tensor, p.trainable)?;
        }
        Ok(())
    }

    /// SHA-256 over name, shape and little-endian `f64` bytes of every
    /// parameter accepted by `filter`.
    pub fn digest_where(&self, filter: impl Fn(&str, &Param<T>) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            if !filter(name, p) {
                continue;
            }
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((p.tensor.shape().len() as u64).to_le_bytes());
            for &d in p.tensor.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn digest_prefix(&self, prefix: &str) -> String {
        self.digest_where(|n, _| n.starts_with(prefix))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), Param { tensor: p.tensor.cast(), trainable: p.trainable }))
                .collect(),
        }
    }
}
