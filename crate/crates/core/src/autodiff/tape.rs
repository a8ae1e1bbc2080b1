use super::ParamTree;
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, gemm, group_norm_saved, max_pool2d, softmax_cross_entropy, Element, GroupNormSaved,
    MatRef, Tensor,
};

/// Handle to a recorded value. Every value carries the batch axis first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

pub(crate) enum Op<T> {
    Input,
    Dense {
        x: Var,
        w: usize,
        b: Option<usize>,
    },
    Conv2d {
        x: Var,
        w: usize,
        b: Option<usize>,
        stride: usize,
        padding: usize,
    },
    GroupNorm {
        x: Var,
        gamma: usize,
        beta: usize,
        saved: GroupNormSaved<T>,
    },
    Tanh(Var),
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Flatten(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    SumPerExample(Var),
    MeanPerExample(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

/// Records a forward evaluation so it can be differentiated.
///
/// Parameters are referenced by name and must each be consumed by at most one
/// operation; the per-example norm rules rely on that.
pub struct Tape<'p, T: Element> {
    pub(crate) params: &'p ParamTree<T>,
    pub(crate) nodes: Vec<Node<T>>,
    owner: Vec<Option<usize>>,
    batch: Option<usize>,
}

impl<'p, T: Element> Tape<'p, T> {
    pub fn new(params: &'p ParamTree<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            owner: vec![None; params.len()],
            batch: None,
        }
    }

    pub fn params(&self) -> &'p ParamTree<T> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn batch(&self) -> Option<usize> {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn claim(&mut self, name: &str) -> Result<usize> {
        let i = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if self.owner[i].is_some() {
            return Err(Error::ParamReused(name.to_string()));
        }
        self.owner[i] = Some(self.nodes.len());
        Ok(i)
    }

    fn trainable(&self, i: usize) -> bool {
        self.params.at(i).trainable
    }

    /// Adds a constant batch input. All inputs of one tape share the batch extent.
    pub fn input(&mut self, x: Tensor<T>) -> Result<Var> {
        let b = x.batch();
        match self.batch {
            Some(existing) if existing != b => {
                return Err(Error::ShapeMismatch {
                    op: "tape input",
                    lhs: vec![existing],
                    rhs: x.shape().to_vec(),
                })
            }
            _ => self.batch = Some(b),
        }
        Ok(self.push(x, Op::Input, false))
    }

    /// `y = x·Wᵀ + b` for `x: B×I`, `W: O×I`, `b: O`.
    pub fn dense(&mut self, x: Var, weight: &str, bias: Option<&str>) -> Result<Var> {
        let w = self.claim(weight)?;
        let b = bias.map(|n| self.claim(n)).transpose()?;
        let xv = self.value(x);
        let wv = &self.params.at(w).value;
        if xv.ndim() != 2 || wv.ndim() != 2 || xv.shape()[1] != wv.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let (batch, inp, out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
        let mut y = vec![T::zero(); batch * out];
        gemm(
            T::one(),
            MatRef::new(xv.data(), batch, inp),
            MatRef::new(wv.data(), out, inp).t(),
            T::zero(),
            &mut y,
        );
        if let Some(bi) = b {
            let bv = &self.params.at(bi).value;
            if bv.shape() != [out] {
                return Err(Error::ShapeMismatch {
                    op: "dense bias",
                    lhs: bv.shape().to_vec(),
                    rhs: vec![out],
                });
            }
            for row in y.chunks_mut(out) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
        }
        let needs = self.needs(x) || self.trainable(w) || b.is_some_and(|i| self.trainable(i));
        Ok(self.push(Tensor::new(vec![batch, out], y)?, Op::Dense { x, w, b }, needs))
    }

    /// Zero-padded 2-D convolution with an optional per-filter bias.
    pub fn conv2d(&mut self, x: Var, weight: &str, bias: Option<&str>, stride: usize, padding: usize) -> Result<Var> {
        let w = self.claim(weight)?;
        let b = bias.map(|n| self.claim(n)).transpose()?;
        let wv = &self.params.at(w).value;
        let mut y = conv2d(self.value(x), wv, stride, padding)?;
        if let Some(bi) = b {
            let bv = &self.params.at(bi).value;
            let f = wv.shape()[0];
            if bv.shape() != [f] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: bv.shape().to_vec(),
                    rhs: vec![f],
                });
            }
            let plane = y.row_len() / f;
            for chunk in y.data_mut().chunks_mut(plane).enumerate() {
                let bb = bv.data()[chunk.0 % f];
                for v in chunk.1 {
                    *v += bb;
                }
            }
        }
        let needs = self.needs(x) || self.trainable(w) || b.is_some_and(|i| self.trainable(i));
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            needs,
        ))
    }

    pub fn group_norm(&mut self, x: Var, gamma: &str, beta: &str, groups: usize, eps: f64) -> Result<Var> {
        let g = self.claim(gamma)?;
        let be = self.claim(beta)?;
        let (y, saved) = group_norm_saved(
            self.value(x),
            groups,
            &self.params.at(g).value,
            &self.params.at(be).value,
            eps,
        )?;
        let needs = self.needs(x) || self.trainable(g) || self.trainable(be);
        Ok(self.push(
            y,
            Op::GroupNorm {
                x,
                gamma: g,
                beta: be,
                saved,
            },
            needs,
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).tanh();
        let n = self.needs(x);
        self.push(y, Op::Tanh(x), n)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).relu();
        let n = self.needs(x);
        self.push(y, Op::Relu(x), n)
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let p = max_pool2d(self.value(x), kernel, stride)?;
        let n = self.needs(x);
        Ok(self.push(p.out, Op::MaxPool { x, argmax: p.argmax }, n))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let y = self.value(x).flatten();
        let n = self.needs(x);
        self.push(y, Op::Flatten(x), n)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        let n = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), n))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        let n = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Mul(a, b), n))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).scale(factor);
        let n = self.needs(x);
        self.push(y, Op::Scale(x, factor), n)
    }

    /// Sum over every non-batch axis, giving one value per example.
    pub fn sum_per_example(&mut self, x: Var) -> Var {
        let y = self.value(x).sum_per_example();
        let n = self.needs(x);
        self.push(y, Op::SumPerExample(x), n)
    }

    pub fn mean_per_example(&mut self, x: Var) -> Var {
        let y = self.value(x).mean_per_example();
        let n = self.needs(x);
        self.push(y, Op::MeanPerExample(x), n)
    }

    /// Per-example softmax cross-entropy of `B×K` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let y = softmax_cross_entropy(self.value(logits), labels)?;
        let n = self.needs(logits);
        Ok(self.push(
            y,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            n,
        ))
    }
}

