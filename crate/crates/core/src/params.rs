//! Named collections of tensors: model parameters, gradients, probe vectors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tensors keyed by a stable parameter path such as `h.0.attn.wq`.
/// Iteration order is lexicographic by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

/// One scalar inside a [`Params`] map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coordinate {
    pub name: String,
    pub index: usize,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Input(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Input(format!("no parameter named {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Params {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn expect_same_layout(&self, other: &Params) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Dimension(format!(
                "parameter maps differ in size: {} vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.tensors.iter().zip(&other.tensors) {
            if ka != kb || va.shape() != vb.shape() {
                return Err(Error::Dimension(format!(
                    "parameter layout mismatch at {ka} {:?} vs {kb} {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Sum of squares over every tensor, accumulated in name order.
    pub fn sum_squares(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data())
            .fold(0.0, |acc, &x| acc + x * x)
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn dot(&self, other: &Params) -> Result<f64> {
        self.expect_same_layout(other)?;
        Ok(self
            .tensors
            .values()
            .zip(other.tensors.values())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .fold(0.0, |acc, (&x, &y)| acc + x * y))
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for t in self.tensors.values_mut() {
            for x in t.data_mut() {
                *x *= alpha;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> Params {
        let mut out = self.clone();
        out.scale_in_place(alpha);
        out
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &Params) -> Result<()> {
        self.expect_same_layout(other)?;
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn coordinate(&self, coord: &Coordinate) -> Result<f64> {
        let t = self.get(&coord.name)?;
        t.data().get(coord.index).copied().ok_or_else(|| {
            Error::Domain(format!(
                "index {} out of range for {} with {} elements",
                coord.index,
                coord.name,
                t.numel()
            ))
        })
    }

    pub fn set_coordinate(&mut self, coord: &Coordinate, value: f64) -> Result<()> {
        let t = self.get_mut(&coord.name)?;
        let n = t.numel();
        let slot = t.data_mut().get_mut(coord.index).ok_or_else(|| {
            Error::Domain(format!(
                "index {} out of range for {} with {n} elements",
                coord.index, coord.name
            ))
        })?;
        *slot = value;
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for Params {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Params {
            tensors: iter.into_iter().collect(),
        }
    }
}
