//! Reverse sweep over a recorded tape.
//!
//! Activation adjoints keep the batch axis, so row `i` of every adjoint is the
//! derivative of `seed[i] * loss[i]` alone. Parameter contributions are handed
//! to a [`ParamSink`], which either sums them over the batch or reduces them to
//! per-example squared norms.

use super::tape::{Node, Op, Var};
use super::ParamTree;
use crate::error::Result;
use crate::tensor::{
    conv2d_input_grad, gemm, im2col, max_pool2d_backward, softmax_cross_entropy_backward, ConvGeometry,
    Element, MatRef, Tensor,
};

pub(crate) trait ParamSink<T: Element> {
    fn dense(&mut self, w: usize, b: Option<usize>, x: &Tensor<T>, delta: &Tensor<T>) -> Result<()>;

    fn conv(
        &mut self,
        w: usize,
        b: Option<usize>,
        x: &Tensor<T>,
        delta: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<()>;

    fn group_norm(&mut self, gamma: usize, beta: usize, xhat: &Tensor<T>, delta: &Tensor<T>) -> Result<()>;
}

fn accumulate<T: Element>(adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut adj[v.0] {
        Some(a) => a.axpy(T::one(), &g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub(crate) fn backprop<T: Element>(
    nodes: &[Node<T>],
    params: &ParamTree<T>,
    loss: Var,
    seed: &[T],
    sink: &mut dyn ParamSink<T>,
) -> Result<()> {
    let mut adj: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
    adj[loss.0] = Some(Tensor::new(vec![seed.len()], seed.to_vec())?);
    let needs = |v: Var| nodes[v.0].needs_grad;

    for id in (0..=loss.0).rev() {
        let node = &nodes[id];
        if !node.needs_grad {
            continue;
        }
        let Some(delta) = adj[id].take() else {
            continue;
        };
        match &node.op {
            Op::Input => {}
            Op::Dense { x, w, b } => {
                let xv = &nodes[x.0].value;
                sink.dense(*w, *b, xv, &delta)?;
                if needs(*x) {
                    let wv = &params.at(*w).value;
                    let (batch, out, inp) = (delta.shape()[0], wv.shape()[0], wv.shape()[1]);
                    let mut dx = vec![T::zero(); batch * inp];
                    gemm(
                        T::one(),
                        MatRef::new(delta.data(), batch, out),
                        MatRef::new(wv.data(), out, inp),
                        T::zero(),
                        &mut dx,
                    );
                    accumulate(&mut adj, *x, Tensor::new(vec![batch, inp], dx)?)?;
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let xv = &nodes[x.0].value;
                sink.conv(*w, *b, xv, &delta, *stride, *padding)?;
                if needs(*x) {
                    let dx = conv2d_input_grad(&delta, &params.at(*w).value, xv.shape(), *stride, *padding)?;
                    accumulate(&mut adj, *x, dx)?;
                }
            }
            Op::GroupNorm { x, gamma, beta, saved } => {
                sink.group_norm(*gamma, *beta, &saved.xhat, &delta)?;
                if needs(*x) {
                    let grads = crate::tensor::group_norm_backward(&delta, saved, &params.at(*gamma).value)?;
                    accumulate(&mut adj, *x, grads.dx)?;
                }
            }
            Op::Tanh(x) => {
                if needs(*x) {
                    let g = delta.zip_map(&node.value, "tanh'", |d, y| d * (T::one() - y * y))?;
                    accumulate(&mut adj, *x, g)?;
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let g = delta.zip_map(&node.value, "relu'", |d, y| if y > T::zero() { d } else { T::zero() })?;
                    accumulate(&mut adj, *x, g)?;
                }
            }
            Op::MaxPool { x, argmax } => {
                if needs(*x) {
                    let g = max_pool2d_backward(&delta, argmax, nodes[x.0].value.shape());
                    accumulate(&mut adj, *x, g)?;
                }
            }
            Op::Flatten(x) => {
                if needs(*x) {
                    let g = delta.reshape(nodes[x.0].value.shape())?;
                    accumulate(&mut adj, *x, g)?;
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(&mut adj, *a, delta.clone())?;
                }
                if needs(*b) {
                    accumulate(&mut adj, *b, delta)?;
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(&mut adj, *a, delta.mul(&nodes[b.0].value)?)?;
                }
                if needs(*b) {
                    accumulate(&mut adj, *b, delta.mul(&nodes[a.0].value)?)?;
                }
            }
            Op::Scale(x, factor) => {
                if needs(*x) {
                    accumulate(&mut adj, *x, delta.scale(*factor))?;
                }
            }
            Op::SumPerExample(x) | Op::MeanPerExample(x) => {
                if needs(*x) {
                    let src = &nodes[x.0].value;
                    let r = src.row_len();
                    let div = match node.op {
                        Op::MeanPerExample(_) => T::lit(r as f64),
                        _ => T::one(),
                    };
                    let mut g = Tensor::zeros(src.shape());
                    for (i, &d) in delta.data().iter().enumerate() {
                        g.row_mut(i).fill(d / div);
                    }
                    accumulate(&mut adj, *x, g)?;
                }
            }
            Op::CrossEntropy { logits, labels } => {
                if needs(*logits) {
                    let g = softmax_cross_entropy_backward(&nodes[logits.0].value, labels, delta.data())?;
                    accumulate(&mut adj, *logits, g)?;
                }
            }
        }
    }
    Ok(())
}

fn geometry<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: usize) -> Result<ConvGeometry> {
    let s = x.shape();
    ConvGeometry::new(s[1], s[2], s[3], w.shape()[2], w.shape()[3], stride, padding)
}

/// Accumulates batch-summed gradients of trainable parameters.
pub(crate) struct SumSink<'a, T: Element> {
    params: &'a ParamTree<T>,
    pub grads: ParamTree<T>,
}

impl<'a, T: Element> SumSink<'a, T> {
    pub fn new(params: &'a ParamTree<T>) -> Self {
        SumSink {
            params,
            grads: params.zeros_like_trainable(),
        }
    }

    fn slot(&mut self, i: usize) -> Option<&mut Tensor<T>> {
        let p = self.params.at(i);
        if !p.trainable {
            return None;
        }
        let j = self.grads.index_of(&p.name)?;
        Some(&mut self.grads.at_mut(j).value)
    }
}

impl<T: Element> ParamSink<T> for SumSink<'_, T> {
    fn dense(&mut self, w: usize, b: Option<usize>, x: &Tensor<T>, delta: &Tensor<T>) -> Result<()> {
        let (batch, inp, out) = (x.shape()[0], x.shape()[1], delta.shape()[1]);
        if let Some(gw) = self.slot(w) {
            gemm(
                T::one(),
                MatRef::new(delta.data(), batch, out).t(),
                MatRef::new(x.data(), batch, inp),
                T::one(),
                gw.data_mut(),
            );
        }
        if let Some(gb) = b.and_then(|b| self.slot(b)) {
            for row in delta.data().chunks(out) {
                for (g, &d) in gb.data_mut().iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        Ok(())
    }

    fn conv(
        &mut self,
        w: usize,
        b: Option<usize>,
        x: &Tensor<T>,
        delta: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<()> {
        let params = self.params;
        let wv = &params.at(w).value;
        let g = geometry(x, wv, stride, padding)?;
        let (f, k, p) = (wv.shape()[0], g.patch_len(), g.positions());
        if let Some(gw) = self.slot(w) {
            for bi in 0..x.batch() {
                let cols = im2col(x.row(bi), &g);
                gemm(
                    T::one(),
                    MatRef::new(delta.row(bi), f, p),
                    MatRef::new(&cols, k, p).t(),
                    T::one(),
                    gw.data_mut(),
                );
            }
        }
        if let Some(gb) = b.and_then(|b| self.slot(b)) {
            for (c, plane) in delta.data().chunks(p).enumerate() {
                gb.data_mut()[c % f] += plane.iter().copied().sum::<T>();
            }
        }
        Ok(())
    }

    fn group_norm(&mut self, gamma: usize, beta: usize, xhat: &Tensor<T>, delta: &Tensor<T>) -> Result<()> {
        let c = self.params.at(gamma).value.len();
        let spatial = delta.row_len() / c;
        if let Some(gg) = self.slot(gamma) {
            for (i, (d, h)) in delta.data().chunks(spatial).zip(xhat.data().chunks(spatial)).enumerate() {
                gg.data_mut()[i % c] += d.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        if let Some(gb) = self.slot(beta) {
            for (i, d) in delta.data().chunks(spatial).enumerate() {
                gb.data_mut()[i % c] += d.iter().copied().sum::<T>();
            }
        }
        Ok(())
    }
}

/// Accumulates, per example, the squared norm of that example's gradient with
/// respect to every trainable parameter, optionally shifted by `decay·θ`
/// (the gradient of an in-loss `decay/2·‖θ‖²` term).
///
/// Dense layers use the factored form `‖δᵢ‖²·‖xᵢ‖²`; conv layers materialize
/// one example's weight gradient at a time and reduce it immediately.
pub(crate) struct NormSink<'a, T: Element> {
    params: &'a ParamTree<T>,
    decay: T,
    pub sq: Vec<T>,
    visited: Vec<bool>,
}

impl<'a, T: Element> NormSink<'a, T> {
    pub fn new(params: &'a ParamTree<T>, batch: usize, decay: T) -> Self {
        NormSink {
            params,
            decay,
            sq: vec![T::zero(); batch],
            visited: vec![false; params.len()],
        }
    }

    fn live(&mut self, i: usize) -> bool {
        self.visited[i] = true;
        self.params.at(i).trainable
    }

    /// Adds the constant `decay²‖θ‖²` of trainable parameters no operation consumed.
    pub fn finish(mut self) -> Vec<T> {
        if self.decay != T::zero() {
            let extra: T = (0..self.params.len())
                .filter(|&i| !self.visited[i] && self.params.at(i).trainable)
                .map(|i| self.decay * self.decay * self.params.at(i).value.sq_norm())
                .sum();
            for s in &mut self.sq {
                *s += extra;
            }
        }
        self.sq
    }

    /// Per-channel sums `s_c` (plus `decay·θ_c`) folded into squared norms.
    fn add_channel_sums(&mut self, bi: usize, sums: &[T], theta: &Tensor<T>) {
        let lam = self.decay;
        self.sq[bi] += sums
            .iter()
            .zip(theta.data())
            .map(|(&s, &t)| {
                let v = s + lam * t;
                v * v
            })
            .sum::<T>();
    }
}

impl<T: Element> ParamSink<T> for NormSink<'_, T> {
    fn dense(&mut self, w: usize, b: Option<usize>, x: &Tensor<T>, delta: &Tensor<T>) -> Result<()> {
        let (batch, inp, out) = (x.shape()[0], x.shape()[1], delta.shape()[1]);
        let lam = self.decay;
        let params = self.params;
        if self.live(w) {
            let wv = &params.at(w).value;
            // Cross term δᵢᵀ W xᵢ of ‖δᵢxᵢᵀ + λW‖², only needed with in-loss decay.
            let wx = if lam != T::zero() {
                let mut z = vec![T::zero(); batch * out];
                gemm(
                    T::one(),
                    MatRef::new(x.data(), batch, inp),
                    MatRef::new(wv.data(), out, inp).t(),
                    T::zero(),
                    &mut z,
                );
                Some(z)
            } else {
                None
            };
            let wsq = wv.sq_norm();
            for bi in 0..batch {
                let d = delta.row(bi);
                let dn: T = d.iter().map(|&v| v * v).sum();
                let xn: T = x.row(bi).iter().map(|&v| v * v).sum();
                let mut s = dn * xn;
                if let Some(z) = &wx {
                    let cross: T = d.iter().zip(&z[bi * out..(bi + 1) * out]).map(|(&a, &b)| a * b).sum();
                    s += T::lit(2.0) * lam * cross + lam * lam * wsq;
                }
                self.sq[bi] += s;
            }
        }
        if let Some(b) = b.filter(|&b| self.live(b)) {
            let bias = &params.at(b).value;
            for bi in 0..batch {
                self.add_channel_sums(bi, delta.row(bi), bias);
            }
        }
        Ok(())
    }

    fn conv(
        &mut self,
        w: usize,
        b: Option<usize>,
        x: &Tensor<T>,
        delta: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<()> {
        let params = self.params;
        let wv = &params.at(w).value;
        let g = geometry(x, wv, stride, padding)?;
        let (f, k, p) = (wv.shape()[0], g.patch_len(), g.positions());
        let lam = self.decay;
        if self.live(w) {
            let mut gw = vec![T::zero(); f * k];
            for bi in 0..x.batch() {
                let cols = im2col(x.row(bi), &g);
                if lam == T::zero() {
                    gemm(
                        T::one(),
                        MatRef::new(delta.row(bi), f, p),
                        MatRef::new(&cols, k, p).t(),
                        T::zero(),
                        &mut gw,
                    );
                } else {
                    gw.copy_from_slice(wv.data());
                    gemm(
                        T::one(),
                        MatRef::new(delta.row(bi), f, p),
                        MatRef::new(&cols, k, p).t(),
                        lam,
                        &mut gw,
                    );
                }
                self.sq[bi] += gw.iter().map(|&v| v * v).sum::<T>();
            }
        }
        if let Some(b) = b.filter(|&b| self.live(b)) {
            let bias = &params.at(b).value;
            for bi in 0..x.batch() {
                let sums: Vec<T> = delta.row(bi).chunks(p).map(|c| c.iter().copied().sum()).collect();
                self.add_channel_sums(bi, &sums, bias);
            }
        }
        Ok(())
    }

    fn group_norm(&mut self, gamma: usize, beta: usize, xhat: &Tensor<T>, delta: &Tensor<T>) -> Result<()> {
        let c = self.params.at(gamma).value.len();
        let spatial = delta.row_len() / c;
        let (live_g, live_b) = (self.live(gamma), self.live(beta));
        let params = self.params;
        for bi in 0..delta.batch() {
            let (d, h) = (delta.row(bi), xhat.row(bi));
        if live_g {
                let sums: Vec<T> = d
                    .chunks(spatial)
                    .zip(h.chunks(spatial))
                    .map(|(dc, hc)| dc.iter().zip(hc).map(|(&a, &b)| a * b).sum())
                    .collect();
                self.add_channel_sums(bi, &sums, &params.at(gamma).value);
            }
            if live_b {
                let sums: Vec<T> = d.chunks(spatial).map(|dc| dc.iter().copied().sum()).collect();
                self.add_channel_sums(bi, &sums, &params.at(beta).value);
            }
        }
        Ok(())
    }
}
