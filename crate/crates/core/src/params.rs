//! Flat, named parameter storage shared by the trainable networks.

use crate::container::ArrayContainer;
use crate::error::{Error, Result};
use crate::real::{cast_slice, Real};

/// Handle to one named array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All parameters of a network packed into one contiguous buffer.
///
/// Gradients use the same layout, so an optimizer or a finite-difference
/// check can treat the whole network as a single vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry>,
    data: Vec<T>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let len = shape.iter().product();
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.data.len(),
            len,
        });
        self.data.resize(self.data.len() + len, T::zero());
        id
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        let e = &self.entries[id.0];
        &mut self.data[e.offset..e.offset + e.len]
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let id = self.id(name)?;
        Some(self.get_mut(id))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// A zeroed buffer with this store's layout, used for gradients.
    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.clone(),
            data: cast_slice(&self.data),
        }
    }

    pub fn to_container(&self) -> ArrayContainer {
        let mut c = ArrayContainer::default();
        for e in &self.entries {
            c.push(
                e.name.clone(),
                e.shape.clone(),
                cast_slice(&self.data[e.offset..e.offset + e.len]),
            );
        }
        c
    }

    /// Overwrite values from a container; names and shapes must all match.
    pub fn load_container(&mut self, c: &ArrayContainer) -> Result<()> {
        for e in &self.entries {
            let arr = c
                .get(&e.name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing '{}'", e.name)))?;
            if arr.shape != e.shape {
                return Err(Error::Format(format!(
                    "checkpoint shape for '{}' is {:?}, expected {:?}",
                    e.name, arr.shape, e.shape
                )));
            }
            let vals: Vec<T> = cast_slice(&arr.data);
            self.data[e.offset..e.offset + e.len].copy_from_slice(&vals);
        }
        Ok(())
    }
}
