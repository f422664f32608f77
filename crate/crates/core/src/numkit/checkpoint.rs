//! Checkpoint container for named tensors.
//!
//! The on-disk form is a JSON object:
//!
//! ```json
//! { "format": "medsuggest-checkpoint", "version": 1,
//!   "tensors": [ { "name": "w", "shape": [2, 3], "data": [ ... ] } ] }
//! ```
//!
//! `data` is row-major. Readers must reject unknown `format` strings and
//! versions newer than [`CHECKPOINT_VERSION`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "medsuggest-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            tensors: Vec::new(),
        }
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        });
    }

    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.names().iter().zip(store.values()) {
            self.push(format!("{prefix}{name}"), t);
        }
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let nt = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))?;
        Tensor::new(nt.shape.clone(), nt.data.clone())
    }

    /// Overwrites `store` values from tensors named `prefix + name`.
    pub fn fill_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let values = store
            .names()
            .iter()
            .map(|n| self.get(&format!("{prefix}{n}")))
            .collect::<Result<Vec<_>>>()?;
        store.load_values(values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", ck.format)));
        }
        if ck.version > CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is newer than supported",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
