use super::{Element, Tensor};
use crate::error::{Error, Result};

fn check_labels<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let k = logits.shape()[1];
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes: k,
        });
    }
    Ok(k)
}

/// Row-wise softmax of `B×K` logits.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    for i in 0..logits.batch() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Per-example cross-entropy `logsumexp(z_i) - z_i[y_i]`, returned as a length-B tensor.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    check_labels(logits, labels)?;
    let losses = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            lse - row[y]
        })
        .collect();
    Tensor::new(vec![labels.len()], losses)
}

/// Logit adjoint given per-example loss adjoints `dloss: [B]`.
pub fn softmax_cross_entropy_backward<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
    dloss: &[T],
) -> Result<Tensor<T>> {
    check_labels(logits, labels)?;
    let mut grad = softmax(logits);
    for (i, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(i);
        row[y] -= T::one();
        for v in row.iter_mut() {
            *v *= dloss[i];
        }
    }
    Ok(grad)
}
