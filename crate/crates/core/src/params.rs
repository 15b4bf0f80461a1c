//! Named, hierarchical parameter storage.

use std::collections::{BTreeMap, BTreeSet};

use infosync_tensor::Tensor;

use crate::error::{Error, Result};

/// Learnable arrays and non-learnable buffers (running statistics),
/// addressed by dotted path such as `frontend.stem.bn.gamma`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    entries: BTreeMap<String, Tensor>,
    buffers: BTreeSet<String>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        let path = path.into();
        self.buffers.remove(&path);
        self.entries.insert(path, value);
    }

    pub fn insert_buffer(&mut self, path: impl Into<String>, value: Tensor) {
        let path = path.into();
        self.buffers.insert(path.clone());
        self.entries.insert(path, value);
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.entries
            .get(path)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter `{path}`")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(path)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter `{path}`")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn is_buffer(&self, path: &str) -> bool {
        self.buffers.contains(path)
    }

    /// Every entry in path order, buffers included.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.iter().filter(|(k, _)| !self.buffers.contains(*k))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrites values from `other`, which must hold exactly the same
    /// paths with the same shapes.
    pub fn load_from(&mut self, other: &BTreeMap<String, Tensor>) -> Result<()> {
        for path in self.entries.keys() {
            if !other.contains_key(path) {
                return Err(Error::Format(format!("parameter `{path}` missing")));
            }
        }
        for (path, value) in other {
            let slot = self
                .entries
                .get_mut(path)
                .ok_or_else(|| Error::Format(format!("unexpected parameter `{path}`")))?;
            if slot.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "parameter `{path}`: expected shape {:?}, found {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
            *slot = value.clone();
        }
        Ok(())
    }
}
