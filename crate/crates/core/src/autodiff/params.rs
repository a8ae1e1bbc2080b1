use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A named parameter tensor with its trainable flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered collection of named parameters.
///
/// Names are unique and iteration follows insertion order, so flattening the
/// trainable subset into a vector is deterministic and invertible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamTree<T = f64> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ParamTree<T> {
    pub fn new() -> Self {
        ParamTree {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Mutable access to parameter values; names and flags stay fixed.
    pub fn values_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>, bool)> {
        self.params
            .iter_mut()
            .map(|p| (p.name.as_str(), &mut p.value, p.trainable))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        Ok(&mut self.params[i].value)
    }

    pub fn at(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub(crate) fn at_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        self.params[i].trainable = trainable;
        Ok(())
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter().filter(|p| p.trainable)
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.trainable().map(|p| p.value.len()).sum()
    }

    /// Concatenation of every trainable tensor in iteration order.
    pub fn flatten_trainable(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_trainable_elements());
        for p in self.trainable() {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// Inverse of [`ParamTree::flatten_trainable`].
    pub fn unflatten_trainable(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_trainable_elements() {
            return Err(Error::ShapeMismatch {
                op: "unflatten_trainable",
                lhs: vec![flat.len()],
                rhs: vec![self.num_trainable_elements()],
            });
        }
        let mut offset = 0;
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Zero-valued tree with one entry per trainable parameter: the shape of a gradient.
    pub fn zeros_like_trainable(&self) -> ParamTree<T> {
        let mut out = ParamTree::new();
        for p in self.trainable() {
            out.params.push(Param {
                name: p.name.clone(),
                value: Tensor::zeros(p.value.shape()),
                trainable: true,
            });
            out.index.insert(p.name.clone(), out.params.len() - 1);
        }
        out
    }

    /// Squared ℓ2 norm over every entry of the tree.
    pub fn sq_norm(&self) -> T {
        self.params.iter().map(|p| p.value.sq_norm()).sum()
    }

    pub fn norm(&self) -> T {
        self.sq_norm().sqrt()
    }

    pub fn scale_mut(&mut self, s: T) {
        for p in &mut self.params {
            p.value.scale_mut(s);
        }
    }

    /// `self[name] += alpha * other[name]` for every entry of `other`.
    pub fn axpy(&mut self, alpha: T, other: &ParamTree<T>) -> Result<()> {
        for p in &other.params {
            let i = self
                .index_of(&p.name)
                .ok_or_else(|| Error::UnknownParam(p.name.clone()))?;
            self.params[i].value.axpy(alpha, &p.value)?;
        }
        Ok(())
    }

    /// Largest elementwise difference against a tree with the same names.
    pub fn max_abs_diff(&self, other: &ParamTree<T>) -> Result<T> {
        if self.len() != other.len() {
            return Err(Error::InvalidArgument(format!(
                "trees differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let mut worst = T::zero();
        for p in &self.params {
            worst = worst.max(p.value.max_abs_diff(other.value(&p.name)?)?);
        }
        Ok(worst)
    }

    pub fn cast<U: Element>(&self) -> ParamTree<U> {
        ParamTree {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> ParamTree<f64> {
        let mut t = ParamTree::new();
        t.insert("a", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true).unwrap();
        t.insert("frozen", Tensor::from_f64(&[1], &[9.0]).unwrap(), false).unwrap();
        t.insert("b", Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap(), true).unwrap();
        t
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut t = tree();
        assert!(matches!(
            t.insert("a", Tensor::zeros(&[1]), true),
            Err(Error::DuplicateParam(_))
        ));
    }

    #[test]
    fn flatten_skips_frozen_and_round_trips() {
        let mut t = tree();
        let flat = t.flatten_trainable();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0]);
        t.unflatten_trainable(&[5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(t.value("b").unwrap().data(), &[7.0, 8.0]);
        assert_eq!(t.value("frozen").unwrap().data(), &[9.0]);
        assert!(t.unflatten_trainable(&[1.0]).is_err());
    }

    #[test]
    fn gradient_shape_tree_has_only_trainable_entries() {
        let g = tree().zeros_like_trainable();
        let names: Vec<_> = g.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }
}
