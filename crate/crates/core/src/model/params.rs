use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// One named parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered collection of named parameter blocks. Order is insertion order and
/// is what checkpoints and optimizers rely on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Result<usize> {
        let name = name.into();
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Contract(format!(
                "parameter {name}: {} values for shape {shape:?}",
                data.len()
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        let i = self.entries.len();
        self.index.insert(name.clone(), i);
        self.entries.push(Param { name, shape, data });
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index_of(name).map(move |i| &mut self.entries[i])
    }

    pub fn entry(&self, i: usize) -> &Param<T> {
        &self.entries[i]
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    /// Blocks whose name starts with `prefix`, keeping their full names.
    pub fn subset(&self, prefix: &str) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for p in self.entries.iter().filter(|p| p.name.starts_with(prefix)) {
            out.insert(p.name.clone(), p.shape.clone(), p.data.clone())
                .expect("names are unique within a set");
        }
        out
    }

    /// Appends every block of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamSet<T>) -> Result<()> {
        for p in other.entries {
            self.insert(p.name, p.shape, p.data)?;
        }
        Ok(())
    }

    /// Copies values for every block of `other` into the same-named block here.
    pub fn load_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        for p in other.iter() {
            let dst = self
                .get_mut(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {}", p.name)))?;
            if dst.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {}: shape {:?} does not match {:?}",
                    p.name, p.shape, dst.shape
                )));
            }
            dst.data.copy_from_slice(&p.data);
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.entries {
            out.insert(
                p.name.clone(),
                p.shape.clone(),
                p.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            )
            .expect("names are unique within a set");
        }
        out
    }

    /// SHA-256 over names, shapes and little-endian `f32` values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.entries {
            hash_layout(&mut h, p);
            for v in &p.data {
                h.update((v.as_f64() as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// SHA-256 over names and shapes only.
    pub fn architecture_digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.entries {
            hash_layout(&mut h, p);
        }
        hex::encode(h.finalize())
    }
}

fn hash_layout<T>(h: &mut Sha256, p: &Param<T>) {
    h.update((p.name.len() as u64).to_le_bytes());
    h.update(p.name.as_bytes());
    h.update((p.shape.len() as u64).to_le_bytes());
    for d in &p.shape {
        h.update((*d as u64).to_le_bytes());
    }
}

/// Gradient buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        ParamGrads {
            grads: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            *g = *g * s;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
