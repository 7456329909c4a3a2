use std::path::Path;
use std::sync::Arc;

use super::{tnsr, Real, Tensor};
use crate::error::{Error, Result};

/// Named, shareable parameter tensors.
///
/// Tensors sit behind `Arc` so graphs built for a forward pass can reference
/// them without copying; optimizer updates go through `Arc::make_mut`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Adds a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(Arc::new(tensor));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Arc<Tensor<T>> {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Arc<Tensor<T>>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    /// Writes one `<name>.tnsr` file per tensor into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.iter() {
            tnsr::write(&dir.join(format!("{name}.tnsr")), t)?;
        }
        Ok(())
    }

    /// Loads tensors named `names` from `dir`, in that order.
    pub fn load_dir(dir: &Path, names: &[String]) -> Result<Self> {
        let mut store = Self::new();
        for name in names {
            let t = tnsr::read(&dir.join(format!("{name}.tnsr")))?;
            store.push(name.clone(), t);
        }
        Ok(store)
    }

    /// Checks that every tensor has the same shape as in `other`.
    pub fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::malformed("parameter names differ"));
        }
        for ((name, a), (_, b)) in self.iter().zip(other.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::dim(format!(
                    "parameter {name}: shape {:?} != expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}
