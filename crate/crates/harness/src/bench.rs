//! Epoch wall-time of non-private, fast-clipping and naive-clipping training.

use std::time::Instant;

use dpscale_core::autodiff::ParamTree;
use dpscale_core::data::Dataset;
use dpscale_core::dp::{dp_sgd_step, ClipMethod, LrSchedule, OptimizerState, ScheduleShape};
use dpscale_core::models::{Activation, Network};
use dpscale_core::{DType, Element};
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, ExperimentConfig, ModelConfig};
use crate::data;
use crate::error::{Error, Result};
use crate::train::{build_network, derive_seed, plan, resolved_optimizer, sampler_for, split_batch, step_schedule, write_json, INIT_STREAM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Epochs run before timing starts.
    pub warmup_epochs: usize,
    pub epochs: usize,
    /// Batch sizes to time; the config's batch size when empty.
    pub batch_sizes: Vec<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmup_epochs: 1,
            epochs: 3,
            batch_sizes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    /// Mean seconds per epoch.
    pub non_private_s: f64,
    pub fast_s: f64,
    pub naive_s: f64,
    pub fast_ratio: f64,
    pub naive_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub num_params: usize,
    pub train_examples: usize,
    pub rows: Vec<BenchRow>,
    /// Largest parameter difference between the fast and naive paths after one identical private step.
    pub path_max_abs_diff: f64,
}

/// MLP 256-256 on a 10-class, 128-dimensional Gaussian mixture with batch 256.
pub fn reference_bench_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::example();
    cfg.name = "bench".into();
    cfg.model = ModelConfig::Mlp {
        hidden: vec![256, 256],
        activation: Activation::Tanh,
    };
    cfg.data = DataConfig::GaussianMixture {
        n: 8192,
        d: 128,
        classes: 10,
        separation: 4.0,
        test_fraction: 0.1,
        seed: 0,
    };
    cfg.privacy.target_epsilon = None;
    cfg.optimizer.noise_multiplier = 1.0;
    cfg.optimizer.clip_norm = Some(1.0);
    cfg.optimizer.batch_size = 256;
    cfg.optimizer.schedule = LrSchedule::constant(0.1, 1.0);
    cfg.with_epochs(1.0)
}

fn time_epochs<T: Element>(cfg: &ExperimentConfig, net: &Network, init: &ParamTree<T>, train: &Dataset, opts: &BenchOptions) -> Result<f64> {
    let total = opts.warmup_epochs + opts.epochs;
    let cfg = cfg.clone().with_epochs(total as f64);
    let plan = plan(&cfg, train.len())?;
    let opt = resolved_optimizer(&cfg, plan.sigma);
    let mut schedule = step_schedule(&cfg, &plan);
    schedule.shape = ScheduleShape::Constant;
    schedule.warmup_steps = 0;
    let mut params = init.clone();
    let mut state = OptimizerState::new(&params);
    let mut sampler = sampler_for(&cfg, train.len())?;
    let mut measured = 0.0;
    for e in 1..=total {
        let end = ((e as f64 * plan.steps_per_epoch).round() as u64).min(plan.total_steps);
        let started = Instant::now();
        while state.step < end {
            let idx = sampler.next_batch();
            let batches = split_batch::<T>(train, &idx, opt.virtual_steps);
            dp_sgd_step(&mut state, &mut params, net, &batches, &opt, &schedule)?;
        }
        if e > opts.warmup_epochs {
            measured += started.elapsed().as_secs_f64();
        }
    }
    Ok(measured / opts.epochs as f64)
}

/// Parameters after one private step of each clipping path from the same start.
fn one_step_diff<T: Element>(cfg: &ExperimentConfig, net: &Network, init: &ParamTree<T>, train: &Dataset) -> Result<f64> {
    let plan = plan(cfg, train.len())?;
    let mut out = Vec::new();
    for method in [ClipMethod::Fast, ClipMethod::Naive] {
        let mut c = cfg.clone();
        c.optimizer.clip_method = method;
        let opt = resolved_optimizer(&c, cfg.optimizer.noise_multiplier);
        let mut schedule = step_schedule(&c, &plan);
        schedule.warmup_steps = 0;
        let mut params = init.clone();
        let mut state = OptimizerState::new(&params);
        let idx = sampler_for(&c, train.len())?.next_batch();
        let batches = split_batch::<T>(train, &idx, opt.virtual_steps);
        dp_sgd_step(&mut state, &mut params, net, &batches, &opt, &schedule)?;
        out.push(params);
    }
    Ok(out[0].max_abs_diff(&out[1])?.as_f64())
}

fn bench_typed<T: Element>(cfg: &ExperimentConfig, train: &Dataset, opts: &BenchOptions) -> Result<BenchReport> {
    let net = build_network(&cfg.model, &train.example_shape, train.num_classes)?;
    let init = net.init::<T>(derive_seed(cfg.seed, INIT_STREAM));
    let mut private = cfg.clone();
    private.privacy.target_epsilon = None;
    private.optimizer.clip_norm = Some(cfg.optimizer.clip_norm.unwrap_or(1.0));
    if private.optimizer.noise_multiplier == 0.0 {
        private.optimizer.noise_multiplier = 1.0;
    }
    let sizes = if opts.batch_sizes.is_empty() {
        vec![cfg.optimizer.batch_size]
    } else {
        opts.batch_sizes.clone()
    };
    let mut rows = Vec::new();
    for &b in &sizes {
        let mut public = cfg.clone().non_private();
        public.optimizer.batch_size = b;
        let mut fast = private.clone();
        fast.optimizer.batch_size = b;
        fast.optimizer.clip_method = ClipMethod::Fast;
        let mut naive = fast.clone();
        naive.optimizer.clip_method = ClipMethod::Naive;
        let non_private_s = time_epochs(&public, &net, &init, train, opts)?;
        let fast_s = time_epochs(&fast, &net, &init, train, opts)?;
        let naive_s = time_epochs(&naive, &net, &init, train, opts)?;
        rows.push(BenchRow {
            batch_size: b,
            non_private_s,
            fast_s,
            naive_s,
            fast_ratio: fast_s / non_private_s,
            naive_ratio: naive_s / non_private_s,
        });
    }
    Ok(BenchReport {
        num_params: net.num_params(),
        train_examples: train.len(),
        rows,
        path_max_abs_diff: one_step_diff(&private, &net, &init, train)?,
    })
}

pub fn cmd_bench(cfg: &ExperimentConfig, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.epochs == 0 {
        return Err(Error::Config("bench needs at least one timed epoch".into()));
    }
    let splits = data::load(&cfg.data)?;
    let report = match cfg.dtype {
        DType::F32 => bench_typed::<f32>(cfg, &splits.train, opts)?,
        DType::F64 => bench_typed::<f64>(cfg, &splits.train, opts)?,
    };
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("bench.json"), &report)?;
        let mut w = csv::Writer::from_path(dir.join("bench.csv"))?;
        for r in &report.rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(report)
}
