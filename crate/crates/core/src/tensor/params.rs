use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

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
    lookup: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, path: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let path = path.into();
        if self.lookup.contains_key(&path) {
            return Err(TensorError::invalid("register", format!("duplicate parameter path `{path}`")));
        }
        let idx = self.values.len();
        self.lookup.insert(path.clone(), idx);
        self.names.push(path);
        self.values.push(value);
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.lookup.get(path).map(|&i| ParamId(i))
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Serialized parameter snapshot: parameter path to shape and row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let params = store
            .names
            .iter()
            .cloned()
            .zip(store.values.iter().cloned())
            .collect();
        Checkpoint { params }
    }

    /// Overwrites every parameter of `store`; paths and shapes must match exactly.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(TensorError::invalid(
                "checkpoint",
                format!("checkpoint has {} parameters, model has {}", self.params.len(), store.len()),
            ));
        }
        for (path, tensor) in &self.params {
            let id = store.id(path).ok_or_else(|| TensorError::UnknownParam(path.clone()))?;
            let slot = store.get_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(TensorError::mismatch("checkpoint", slot.shape(), tensor.shape()));
            }
            let numel: usize = tensor.shape().iter().product();
            if numel != tensor.len() {
                return Err(TensorError::DataLength {
                    shape: tensor.shape().to_vec(),
                    len: tensor.len(),
                });
            }
            *slot = tensor.clone();
        }
        Ok(())
    }
}
