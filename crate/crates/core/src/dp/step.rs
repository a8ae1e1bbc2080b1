use crate::autodiff::{forward_per_example, Forward, ParamTree};
use crate::error::{invalid, Result};
use crate::tensor::{Element, Tensor};

use super::{add_noise, clipped_grad_sum, lr_at, DpSgdConfig, StepSchedule, WeightDecayMode};

/// One sub-batch of examples. May be empty under Poisson sampling.
#[derive(Clone, Debug)]
pub struct Batch<T: Element = f64> {
    pub x: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Element> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Momentum buffers and step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Element = f64> {
    pub momentum: ParamTree<T>,
    pub step: u64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(params: &ParamTree<T>) -> Self {
        OptimizerState {
            momentum: params.zeros_like_trainable(),
            step: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    pub examples: usize,
    /// Examples whose gradient norm exceeded the clip norm.
    pub clipped: usize,
    pub loss_sum: f64,
}

/// Noised, normalized gradient for one logical step, before weight decay and momentum.
pub fn private_gradient<T: Element>(
    params: &ParamTree<T>,
    model: &dyn Forward<T>,
    batches: &[Batch<T>],
    cfg: &DpSgdConfig,
    step: u64,
) -> Result<(ParamTree<T>, StepReport)> {
    if batches.len() != cfg.virtual_steps {
        return Err(invalid(format!(
            "expected {} sub-batches, got {}",
            cfg.virtual_steps,
            batches.len()
        )));
    }
    let in_loss = match cfg.weight_decay_mode {
        WeightDecayMode::InLoss => cfg.weight_decay,
        WeightDecayMode::PostClip => 0.0,
    };
    let mut g = params.zeros_like_trainable();
    let mut report = StepReport::default();
    for b in batches.iter().filter(|b| !b.is_empty()) {
        let (losses, graph) = forward_per_example(model, params, b.x.clone(), &b.labels)?;
        let sum = clipped_grad_sum(&graph, cfg.clip_norm, in_loss, cfg.clip_method)?;
        g.axpy(T::one(), &sum.grads)?;
        report.examples += b.len();
        report.loss_sum += losses.sum().as_f64();
        if let Some(c) = cfg.clip_norm {
            report.clipped += sum.clipped_count(c);
        }
    }
    if let Some(c) = cfg.clip_norm {
        add_noise(&mut g, c, cfg.noise_multiplier, cfg.shards, cfg.seed, step, cfg.parallel_shards);
    }
    g.scale_mut(T::lit(1.0 / cfg.effective_batch() as f64));
    Ok((g, report))
}

/// One DP-SGD update: clip and sum every sub-batch, add noise once, divide by
/// the expected effective batch, apply weight decay, then the Nesterov update
/// `v ← μv + g; θ ← θ − lr·(g + μv)` on trainable parameters.
pub fn dp_sgd_step<T: Element>(
    state: &mut OptimizerState<T>,
    params: &mut ParamTree<T>,
    model: &dyn Forward<T>,
    batches: &[Batch<T>],
    cfg: &DpSgdConfig,
    schedule: &StepSchedule,
) -> Result<StepReport> {
    let lr = lr_at(state.step, schedule)?;
    let (mut g, mut report) = private_gradient(params, model, batches, cfg, state.step)?;
    report.lr = lr;
    if cfg.weight_decay_mode == WeightDecayMode::PostClip && cfg.weight_decay != 0.0 {
        for p in params.trainable() {
            g.value_mut(&p.name)?.axpy(T::lit(cfg.weight_decay), &p.value)?;
        }
    }
    let mu = T::lit(cfg.momentum);
    let lr = T::lit(lr);
    for (name, v, _) in state.momentum.values_mut() {
        let gi = g.value(name)?;
        v.scale_mut(mu);
        v.axpy(T::one(), gi)?;
        let theta = params.value_mut(name)?;
        for ((t, &gg), &vv) in theta.data_mut().iter_mut().zip(gi.data()).zip(v.data()) {
            *t -= lr * (gg + mu * vv);
        }
    }
    state.step += 1;
    Ok(report)
}
