use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered list of named tensors, e.g. one model's gradients or weights.
///
/// The order is part of the value: collectives and shard layouts flatten the
/// set in this order on every core.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    entries: Vec<(String, Tensor)>,
}

/// Weights share the representation of gradients.
pub type WeightSet = GradientSet;

impl GradientSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid("GradientSet::new", format!("duplicate tensor name {name:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn total_elements(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Size on the wire as f32.
    pub fn total_bytes(&self) -> u64 {
        4 * self.total_elements() as u64
    }

    /// Same names, order and shapes.
    pub fn same_structure(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape())
    }

    /// Concatenates all tensors into one contiguous buffer, in set order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.total_elements());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`GradientSet::flatten`] using `self` as the template.
    pub fn unflatten_like(&self, flat: &[f32]) -> Result<Self> {
        if flat.len() != self.total_elements() {
            return Err(Error::shape("unflatten", format!("buffer has {} elements, template needs {}", flat.len(), self.total_elements())));
        }
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|(name, t)| {
                let part = flat[offset..offset + t.len()].to_vec();
                offset += t.len();
                (name.clone(), Tensor::from_parts(t.shape().to_vec(), part))
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn map_tensors(&self, mut f: impl FnMut(usize, &Tensor) -> Tensor) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(i, (n, t))| {
                    let out = f(i, t);
                    debug_assert_eq!(out.shape(), t.shape());
                    (n.clone(), out)
                })
                .collect(),
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.same_structure(other) && self.tensors().zip(other.tensors()).all(|(a, b)| a.bitwise_eq(b))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }
}
