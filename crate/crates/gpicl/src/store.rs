//! Named parameter collections, shared by models, optimizers, and
//! checkpoints. Iteration order is the BTreeMap's name order, which is what
//! makes optimizer updates and serialization deterministic.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Scalar> {
    entries: BTreeMap<String, Tensor<E>>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<E>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name:?}")));
        }
        self.entries.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn param_count(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<T>()))
                .collect(),
        }
    }

    /// Euclidean distance between two stores with identical layouts.
    pub fn l2_distance(&self, other: &ParamStore<E>) -> Result<f64> {
        let mut acc = 0f64;
        for (name, t) in &self.entries {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(Error::Shape(format!("parameter {name:?} shape mismatch")));
            }
            for (&a, &b) in t.data().iter().zip(o.data()) {
                let d = a.to_f64() - b.to_f64();
                acc += d * d;
            }
        }
        Ok(acc.sqrt())
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0f64;
        for t in self.entries.values() {
            for &v in t.data() {
                let x = v.to_f64();
                acc += x * x;
            }
        }
        acc.sqrt()
    }
}

impl<E: Scalar> Graph<E> {
    /// Register every tensor in the store as a named parameter leaf.
    pub fn load_store(&mut self, store: &ParamStore<E>) -> Result<BTreeMap<String, NodeId>> {
        let mut ids = BTreeMap::new();
        for (name, t) in store.iter() {
            ids.insert(name.clone(), self.param(name, t.clone())?);
        }
        Ok(ids)
    }
}
