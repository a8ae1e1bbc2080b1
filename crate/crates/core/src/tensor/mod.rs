//! Dense row-major tensors and the numeric kernels the models are built from.
//!
//! Layout is fixed: batch-first, channels-second (`B×C×H×W` for images).
//! Every kernel is a pure function of its inputs.

mod conv;
mod element;
mod linalg;
mod loss;
mod norm;

pub use conv::{
    col2im, conv2d, conv2d_direct, conv2d_im2col, conv2d_input_grad, conv2d_weight_grad,
    im2col, max_pool2d, max_pool2d_backward, ConvGeometry, MaxPool,
};
pub use element::{DType, Element};
pub(crate) use element::{gemm, MatRef};
pub use linalg::matmul;
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use norm::{
    group_norm, group_norm_backward, group_norm_saved, GroupNormGrads, GroupNormSaved,
    DEFAULT_GROUP_NORM_EPS,
};

use crate::error::{Error, Result};

/// Dense real-valued tensor; `shape.iter().product() == data.len()` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: format!(
                    "shape {shape:?} holds {expected} elements but {} were supplied",
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Row vector convenience constructor from `f64` literals.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Leading (batch) extent.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements per leading-axis row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let r = self.row_len();
        &self.data[i * r..(i + 1) * r]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let r = self.row_len();
        &mut self.data[i * r..(i + 1) * r]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Collapses all non-leading axes: `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&self) -> Tensor<T> {
        Tensor {
            shape: vec![self.batch(), self.row_len()],
            data: self.data.clone(),
        }
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<T> {
        let r = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * r..end * r].to_vec(),
        }
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Tensor<T> {
        let r = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * r);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map(|v| v * s)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.map(|v| v.tanh())
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale_mut(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn fill(&mut self, value: T) {
        for v in &mut self.data {
            *v = value;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn norm(&self) -> T {
        self.sq_norm().sqrt()
    }

    /// Sum over every non-leading axis: `[B, ...] -> [B]`.
    pub fn sum_per_example(&self) -> Tensor<T> {
        let b = self.batch();
        Tensor {
            shape: vec![b],
            data: (0..b).map(|i| self.row(i).iter().copied().sum()).collect(),
        }
    }

    /// Mean over every non-leading axis: `[B, ...] -> [B]`.
    pub fn mean_per_example(&self) -> Tensor<T> {
        let n = T::lit(self.row_len() as f64);
        self.sum_per_example().map(|v| v / n)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
