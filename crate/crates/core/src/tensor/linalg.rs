use super::{gemm, Element, MatRef, Tensor};
use crate::error::{Error, Result};

/// Matrix product of `a: m×k` and `b: k×n`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(
        T::one(),
        MatRef::new(a.data(), m, k),
        MatRef::new(b.data(), k, n),
        T::zero(),
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}
