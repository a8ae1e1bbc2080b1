use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, ArchSpec, Norm};
use crate::autodiff::{Forward, ParamTree, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Element, Tensor, DEFAULT_GROUP_NORM_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv { weight: String, bias: String, stride: usize, padding: usize },
    GroupNorm { gamma: String, beta: String, groups: usize },
    Act(Activation),
    MaxPool { kernel: usize, stride: usize },
    Flatten,
    Dense { weight: String, bias: String },
}

/// A feed-forward classifier: an ordered layer list plus the parameter shapes
/// it expects. Parameters themselves live in a [`ParamTree`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// Per-example input shape (without the batch axis).
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    /// Parameter names of each freezable group, in network order. The output
    /// layer is never part of a group.
    pub groups: Vec<Vec<String>>,
    /// Parameter names of the output layer.
    pub head: Vec<String>,
    shapes: Vec<(String, Vec<usize>, Init)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
enum Init {
    /// Uniform on `±1/√fan_in`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Default)]
struct Builder {
    layers: Vec<Layer>,
    groups: Vec<Vec<String>>,
    shapes: Vec<(String, Vec<usize>, Init)>,
}

impl Builder {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> String {
        if let Some(g) = self.groups.last_mut() {
            g.push(name.clone());
        }
        self.shapes.push((name.clone(), shape, init));
        name
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize) {
        let fan_in = c_in * 9;
        let weight = self.param(format!("{prefix}.weight"), vec![c_out, c_in, 3, 3], Init::FanIn(fan_in));
        let bias = self.param(format!("{prefix}.bias"), vec![c_out], Init::Zeros);
        self.layers.push(Layer::Conv {
            weight,
            bias,
            stride: 1,
            padding: 1,
        });
    }

    fn group_norm(&mut self, prefix: &str, channels: usize, groups: usize) {
        let gamma = self.param(format!("{prefix}.gamma"), vec![channels], Init::Ones);
        let beta = self.param(format!("{prefix}.beta"), vec![channels], Init::Zeros);
        self.layers.push(Layer::GroupNorm { gamma, beta, groups });
    }

    fn dense(&mut self, prefix: &str, inp: usize, out: usize) {
        let weight = self.param(format!("{prefix}.weight"), vec![out, inp], Init::FanIn(inp));
        let bias = self.param(format!("{prefix}.bias"), vec![out], Init::Zeros);
        self.layers.push(Layer::Dense { weight, bias });
    }

    fn finish(mut self, input_shape: &[usize], num_classes: usize, inp: usize) -> Network {
        // The head sits outside every freeze group.
        self.groups.push(Vec::new());
        self.dense("head", inp, num_classes);
        let head = self.groups.pop().expect("head group");
        Network {
            layers: self.layers,
            input_shape: input_shape.to_vec(),
            num_classes,
            groups: self.groups,
            head,
            shapes: self.shapes,
        }
    }
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(invalid(format!("need at least two classes, got {num_classes}")));
    }
    Ok(())
}

impl Network {
    /// simpleVGG: every conv is 3×3, stride 1, padding 1; each block ends in a
    /// 2×2 max-pool (including the last, before the hidden dense layer).
    pub fn simple_vgg(spec: &ArchSpec, input_shape: &[usize], num_classes: usize) -> Result<Network> {
        check_classes(num_classes)?;
        let &[mut c, mut h, mut w] = input_shape else {
            return Err(invalid(format!("simpleVGG needs a C×H×W input, got {input_shape:?}")));
        };
        if spec.blocks.is_empty() || spec.fc_width == 0 {
            return Err(invalid("simpleVGG needs at least one block and a positive fc width"));
        }
        let mut b = Builder::default();
        for (i, block) in spec.blocks.iter().enumerate() {
            if block.channels == 0 || block.convs == 0 {
                return Err(invalid(format!("block {} has no channels or convolutions", i + 1)));
            }
            if h < 2 || w < 2 {
                return Err(invalid(format!(
                    "block {} receives a {h}×{w} feature map, too small for its 2×2 max-pool",
                    i + 1
                )));
            }
            b.groups.push(Vec::new());
            for j in 0..block.convs {
                let prefix = format!("block{}.conv{}", i + 1, j + 1);
                b.conv(&prefix, c, block.channels);
                c = block.channels;
                if let Norm::GroupNorm { groups } = spec.norm {
                    if groups == 0 || c % groups != 0 {
                        return Err(invalid(format!(
                            "block {}: {c} channels are not divisible into {groups} groups",
                            i + 1
                        )));
                    }
                    b.group_norm(&format!("block{}.gn{}", i + 1, j + 1), c, groups);
                }
                b.layers.push(Layer::Act(spec.activation));
            }
            b.layers.push(Layer::MaxPool { kernel: 2, stride: 2 });
            h /= 2;
            w /= 2;
        }
        b.layers.push(Layer::Flatten);
        b.groups.push(Vec::new());
        b.dense("fc", c * h * w, spec.fc_width);
        b.layers.push(Layer::Act(spec.activation));
        Ok(b.finish(input_shape, num_classes, spec.fc_width))
    }

    /// Fully connected network; no hidden layers gives multinomial logistic regression.
    pub fn mlp(input_shape: &[usize], hidden: &[usize], activation: Activation, num_classes: usize) -> Result<Network> {
        check_classes(num_classes)?;
        let mut inp: usize = input_shape.iter().product();
        if input_shape.is_empty() || inp == 0 {
            return Err(invalid(format!("bad input shape {input_shape:?}")));
        }
        let mut b = Builder::default();
        if input_shape.len() > 1 {
            b.layers.push(Layer::Flatten);
        }
        for (i, &width) in hidden.iter().enumerate() {
            if width == 0 {
                return Err(invalid(format!("hidden layer {} has zero width", i + 1)));
            }
            b.groups.push(Vec::new());
            b.dense(&format!("hidden{}", i + 1), inp, width);
            b.layers.push(Layer::Act(activation));
            inp = width;
        }
        Ok(b.finish(input_shape, num_classes, inp))
    }

    pub fn logistic(input_shape: &[usize], num_classes: usize) -> Result<Network> {
        Network::mlp(input_shape, &[], Activation::Tanh, num_classes)
    }

    /// Fresh parameters: fan-in uniform weights, zero biases, unit group-norm scales.
    pub fn init<T: Element>(&self, seed: u64) -> ParamTree<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamTree::new();
        for (name, shape, init) in &self.shapes {
            p.insert(name.clone(), init_tensor(&mut rng, shape, *init), true)
                .expect("builder produces unique names");
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.shapes.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }

    /// Records the logits of `x` on `tape`.
    pub fn record_logits<T: Element>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    padding,
                } => tape.conv2d(h, weight, Some(bias), *stride, *padding)?,
                Layer::GroupNorm { gamma, beta, groups } => {
                    tape.group_norm(h, gamma, beta, *groups, DEFAULT_GROUP_NORM_EPS)?
                }
                Layer::Act(Activation::Tanh) => tape.tanh(h),
                Layer::Act(Activation::Relu) => tape.relu(h),
                Layer::MaxPool { kernel, stride } => tape.max_pool2d(h, *kernel, *stride)?,
                Layer::Flatten => tape.flatten(h),
                Layer::Dense { weight, bias } => tape.dense(h, weight, Some(bias))?,
            };
        }
        Ok(h)
    }

    fn check_input<T: Element>(&self, x: &Tensor<T>) -> Result<()> {
        if x.ndim() == 0 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "network input",
                lhs: x.shape().to_vec(),
                rhs: self.input_shape.clone(),
            });
        }
        Ok(())
    }

    pub fn logits<T: Element>(&self, params: &ParamTree<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(&x)?;
        let mut tape = Tape::new(params);
        let input = tape.input(x)?;
        let out = self.record_logits(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }

    /// Clears the trainable flag on the first `frozen_prefix` groups and sets
    /// it everywhere else. `frozen_prefix = groups.len()` leaves only the head.
    pub fn apply_freeze<T: Element>(&self, params: &ParamTree<T>, plan: FreezePlan) -> Result<ParamTree<T>> {
        if plan.frozen_prefix > self.groups.len() {
            return Err(invalid(format!(
                "cannot freeze {} groups of a network with {}",
                plan.frozen_prefix,
                self.groups.len()
            )));
        }
        let mut out = params.clone();
        for (i, group) in self.groups.iter().enumerate() {
            for name in group {
                out.set_trainable(name, i >= plan.frozen_prefix)?;
            }
        }
        for name in &self.head {
            out.set_trainable(name, true)?;
        }
        Ok(out)
    }

    /// Swaps the output layer for a freshly initialized one with `num_classes`
    /// outputs. Every other tensor is copied bit-exactly.
    pub fn replace_head<T: Element>(
        &self,
        params: &ParamTree<T>,
        num_classes: usize,
        seed: u64,
    ) -> Result<(Network, ParamTree<T>)> {
        check_classes(num_classes)?;
        let mut net = self.clone();
        net.num_classes = num_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = ParamTree::new();
        for entry in &mut net.shapes {
            let (name, shape, init) = entry;
            if net.head.contains(name) {
                shape[0] = num_classes;
                out.insert(name.clone(), init_tensor(&mut rng, shape, *init), true)?;
            } else {
                let p = params.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
                out.insert(name.clone(), p.value.clone(), p.trainable)?;
            }
        }
        Ok((net, out))
    }
}

fn init_tensor<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], init: Init) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, T::one()),
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
        }
    }
}

impl<T: Element> Forward<T> for Network {
    fn record(&self, tape: &mut Tape<'_, T>, input: Var, labels: &[usize]) -> Result<Var> {
        self.check_input(tape.value(input))?;
        let logits = self.record_logits(tape, input)?;
        tape.cross_entropy(logits, labels)
    }
}

/// Number of leading freeze groups to mark non-trainable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub frozen_prefix: usize,
}
