//! Reverse-mode differentiation with a per-example batch axis.
//!
//! A model records its forward pass on a [`Tape`] and returns one loss per
//! example. The resulting [`Graph`] answers three questions without re-running
//! the forward pass: the gradient of a weighted loss sum, every example's
//! gradient norm, and (as a slow reference) every example's full gradient.

mod backward;
mod params;
mod tape;

pub use params::{Param, ParamTree};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use backward::{backprop, NormSink, SumSink};

/// A differentiable model: records the per-example loss of `input` on a tape.
pub trait Forward<T: Element> {
    /// Must return a `[B]` node holding one loss per example.
    fn record(&self, tape: &mut Tape<'_, T>, input: Var, labels: &[usize]) -> Result<Var>;
}

/// Recorded forward evaluation of a model on one batch.
pub struct Graph<'a, T: Element> {
    model: &'a dyn Forward<T>,
    tape: Tape<'a, T>,
    loss: Var,
    labels: Vec<usize>,
}

/// Evaluates `model` on `batch` and keeps the record needed for backward passes.
pub fn forward_per_example<'a, T: Element>(
    model: &'a dyn Forward<T>,
    params: &'a ParamTree<T>,
    batch: Tensor<T>,
    labels: &[usize],
) -> Result<(Tensor<T>, Graph<'a, T>)> {
    if batch.ndim() == 0 || batch.batch() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "forward_per_example",
            lhs: batch.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let mut tape = Tape::new(params);
    let input = tape.input(batch)?;
    let loss = model.record(&mut tape, input, labels)?;
    if tape.value(loss).shape() != [labels.len()] {
        return Err(Error::InvalidShape {
            op: "forward_per_example",
            detail: format!(
                "model returned loss of shape {:?}, expected [{}]",
                tape.value(loss).shape(),
                labels.len()
            ),
        });
    }
    let losses = tape.value(loss).clone();
    Ok((
        losses,
        Graph {
            model,
            tape,
            loss,
            labels: labels.to_vec(),
        },
    ))
}

impl<'a, T: Element> Graph<'a, T> {
    pub fn losses(&self) -> &Tensor<T> {
        self.tape.value(self.loss)
    }

    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    pub fn params(&self) -> &'a ParamTree<T> {
        self.tape.params
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The recorded input batch.
    pub fn input(&self) -> &Tensor<T> {
        // The input is always the first node recorded.
        &self.tape.nodes[0].value
    }

    /// Re-runs the forward pass from the recorded input.
    pub fn replay(&self) -> Result<Tensor<T>> {
        let (losses, _) = forward_per_example(self.model, self.params(), self.input().clone(), &self.labels)?;
        Ok(losses)
    }

    fn check_weights(&self, weights: &[T]) -> Result<()> {
        if weights.len() != self.batch() {
            return Err(Error::ShapeMismatch {
                op: "weighted_backward",
                lhs: vec![weights.len()],
                rhs: vec![self.batch()],
            });
        }
        Ok(())
    }

    /// Gradient of `Σᵢ weights[i]·losses[i]` with respect to the trainable parameters.
    pub fn weighted_backward(&self, weights: &[T]) -> Result<ParamTree<T>> {
        self.check_weights(weights)?;
        let mut sink = SumSink::new(self.params());
        backprop(&self.tape.nodes, self.params(), self.loss, weights, &mut sink)?;
        Ok(sink.grads)
    }

    /// Squared ℓ2 norm of each example's gradient, computed layer by layer.
    pub fn per_example_grad_sq_norms(&self) -> Result<Vec<T>> {
        self.per_example_grad_sq_norms_with_decay(T::zero())
    }

    /// Like [`Self::per_example_grad_sq_norms`] for the loss `ℓᵢ + decay/2·‖θ‖²`.
    pub fn per_example_grad_sq_norms_with_decay(&self, decay: T) -> Result<Vec<T>> {
        let ones = vec![T::one(); self.batch()];
        let mut sink = NormSink::new(self.params(), self.batch(), decay);
        backprop(&self.tape.nodes, self.params(), self.loss, &ones, &mut sink)?;
        Ok(sink.finish())
    }

    pub fn per_example_grad_norms(&self) -> Result<Tensor<T>> {
        let sq = self.per_example_grad_sq_norms()?;
        Tensor::new(vec![sq.len()], sq.into_iter().map(|s| s.max(T::zero()).sqrt()).collect())
    }

    pub fn per_example_grad_norms_with_decay(&self, decay: T) -> Result<Tensor<T>> {
        let sq = self.per_example_grad_sq_norms_with_decay(decay)?;
        Tensor::new(vec![sq.len()], sq.into_iter().map(|s| s.max(T::zero()).sqrt()).collect())
    }

    /// Gradient of `Σᵢ wᵢ·(ℓᵢ + decay/2·‖θ‖²)`.
    pub fn weighted_backward_with_decay(&self, weights: &[T], decay: T) -> Result<ParamTree<T>> {
        let mut grads = self.weighted_backward(weights)?;
        if decay != T::zero() {
            let total: T = weights.iter().copied().sum();
            for p in self.params().trainable() {
                grads.value_mut(&p.name)?.axpy(decay * total, &p.value)?;
            }
        }
        Ok(grads)
    }

    /// Reference implementation: one forward and backward pass per example.
    pub fn per_example_grads(&self) -> Result<Vec<ParamTree<T>>> {
        let input = self.input();
        (0..self.batch())
            .map(|i| {
                let x = input.slice_rows(i, i + 1);
                let (_, g) = forward_per_example(self.model, self.params(), x, &self.labels[i..i + 1])?;
                g.weighted_backward(&[T::one()])
            })
            .collect()
    }
}
