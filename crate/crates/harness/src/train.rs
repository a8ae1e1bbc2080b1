//! Single training runs and their artifacts.

use std::path::Path;
use std::time::Instant;

use dpscale_core::accountant::{default_orders, privacy_report, rdp_step, rdp_to_epsilon, AccountantOptions, Conversion, PrivacyReport};
use dpscale_core::autodiff::ParamTree;
use dpscale_core::data::{Dataset, Sampler, SamplingMode};
use dpscale_core::dp::{dp_sgd_step, Batch, DpSgdConfig, OptimizerState, StepSchedule};
use dpscale_core::models::{parse_arch_spec, save_checkpoint, Network};
use dpscale_core::tensor::softmax_cross_entropy;
use dpscale_core::{accountant, DType, Element};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelConfig, Sampling};
use crate::data::{self, Splits};
use crate::error::{Error, Result};

pub const RECORD_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    /// Mean pre-update loss over the examples sampled this epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub epsilon: Option<f64>,
    /// Seconds spent in optimizer steps (evaluation excluded).
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub num_params: usize,
    pub trainable_params: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    pub steps: u64,
    /// Batches were not Poisson-sampled, so the privacy report assumes more than the sampler delivers.
    pub sampling_mismatch: bool,
    /// Fraction of sampled examples whose gradient norm exceeded the clip norm.
    pub clipped_fraction: f64,
    pub epochs: Vec<EpochMetrics>,
    pub privacy: Option<PrivacyReport>,
    pub final_test_accuracy: f64,
}

/// Row of `metrics.csv`. Wall time is left out so the file is byte-reproducible.
#[derive(Serialize)]
struct MetricsRow {
    epoch: usize,
    step: u64,
    train_loss: f64,
    train_accuracy: f64,
    test_loss: f64,
    test_accuracy: f64,
    epsilon: Option<f64>,
}

/// SplitMix64 finalizer, used to derive independent seeds from one run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const INIT_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
pub(crate) const HEAD_STREAM: u64 = 4;
pub(crate) const SPLIT_STREAM: u64 = 5;

pub fn build_network(model: &ModelConfig, input_shape: &[usize], classes: usize) -> Result<Network> {
    Ok(match model {
        ModelConfig::Logistic => Network::logistic(input_shape, classes)?,
        ModelConfig::Mlp { hidden, activation } => Network::mlp(input_shape, hidden, *activation, classes)?,
        ModelConfig::SimpleVgg { arch, activation, norm } => {
            let spec = parse_arch_spec(arch)?.with_activation(*activation).with_norm(*norm);
            Network::simple_vgg(&spec, input_shape, classes)?
        }
    })
}

/// Step geometry of a run on `n` training examples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunPlan {
    pub q: f64,
    pub steps_per_epoch: f64,
    pub total_steps: u64,
    pub sigma: f64,
}

pub fn plan(cfg: &ExperimentConfig, n: usize) -> Result<RunPlan> {
    let b = cfg.optimizer.effective_batch();
    if b > n {
        return Err(Error::Config(format!(
            "effective batch {b} exceeds the {n} training examples"
        )));
    }
    let q = b as f64 / n as f64;
    let steps_per_epoch = n as f64 / b as f64;
    let total_steps = ((cfg.epochs * steps_per_epoch).round() as u64).max(1);
    let sigma = match cfg.privacy.target_epsilon {
        Some(eps) => accountant::find_noise_multiplier(eps, q, total_steps, cfg.privacy.delta)?,
        None => cfg.optimizer.noise_multiplier,
    };
    Ok(RunPlan {
        q,
        steps_per_epoch,
        total_steps,
        sigma,
    })
}

/// Mean cross-entropy and top-1 accuracy.
pub fn evaluate<T: Element>(net: &Network, params: &ParamTree<T>, ds: &Dataset, batch: usize) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let b = ds.batch::<T>(chunk);
        let logits = net.logits(params, b.x)?;
        loss += softmax_cross_entropy(&logits, &b.labels)?.sum().as_f64();
        for (i, &y) in b.labels.iter().enumerate() {
            let row = logits.row(i);
            let arg = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            correct += usize::from(arg == y);
        }
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Splits one logical batch into `parts` near-equal sub-batches.
pub fn split_batch<T: Element>(ds: &Dataset, indices: &[usize], parts: usize) -> Vec<Batch<T>> {
    let n = indices.len();
    (0..parts)
        .map(|i| ds.batch(&indices[i * n / parts..(i + 1) * n / parts]))
        .collect()
}

pub fn sampler_for(cfg: &ExperimentConfig, n: usize) -> Result<Sampler> {
    let b = cfg.optimizer.effective_batch();
    let mode = match cfg.sampling {
        Sampling::Poisson => SamplingMode::Poisson { q: b as f64 / n as f64 },
        Sampling::Shuffled => SamplingMode::Shuffled { batch_size: b },
    };
    Ok(Sampler::new(mode, n, derive_seed(cfg.seed, SAMPLER_STREAM))?)
}

/// The optimizer config actually used: resolved σ and a noise seed tied to the run seed.
pub fn resolved_optimizer(cfg: &ExperimentConfig, sigma: f64) -> DpSgdConfig {
    let mut opt = cfg.optimizer.clone();
    opt.noise_multiplier = sigma;
    opt.seed = derive_seed(cfg.seed, NOISE_STREAM).wrapping_add(cfg.optimizer.seed);
    opt
}

pub fn step_schedule(cfg: &ExperimentConfig, plan: &RunPlan) -> StepSchedule {
    let s = &cfg.optimizer.schedule;
    StepSchedule {
        max_lr: s.max_lr,
        warmup_steps: ((s.warmup_epochs * plan.steps_per_epoch).round() as u64).min(plan.total_steps),
        total_steps: plan.total_steps,
        shape: s.shape,
    }
}

/// Trains `params` (after applying the config's freeze plan) and evaluates after every epoch.
pub fn train_on<T: Element>(
    cfg: &ExperimentConfig,
    net: &Network,
    params: ParamTree<T>,
    train: &Dataset,
    test: &Dataset,
) -> Result<(RunRecord, ParamTree<T>)> {
    let plan = plan(cfg, train.len())?;
    let opt = resolved_optimizer(cfg, plan.sigma);
    let schedule = step_schedule(cfg, &plan);
    let private = plan.sigma > 0.0;
    let mut params = net.apply_freeze(&params, cfg.freeze)?;
    let mut state = OptimizerState::new(&params);
    let mut sampler = sampler_for(cfg, train.len())?;

    let orders = default_orders();
    let one_step = if private {
        rdp_step(plan.q, plan.sigma, &orders)?
    } else {
        Vec::new()
    };
    let epsilon_after = |steps: u64| -> Result<Option<f64>> {
        if !private {
            return Ok(None);
        }
        let rdp: Vec<f64> = one_step.iter().map(|r| steps as f64 * r).collect();
        Ok(Some(rdp_to_epsilon(&orders, &rdp, cfg.privacy.delta, Conversion::default())?.0))
    };

    let num_epochs = cfg.epochs.ceil() as usize;
    let mut epochs = Vec::with_capacity(num_epochs);
    let (mut seen, mut clipped) = (0usize, 0usize);
    for e in 1..=num_epochs {
        let end = if e == num_epochs {
            plan.total_steps
        } else {
            ((e as f64 * plan.steps_per_epoch).round() as u64).min(plan.total_steps)
        };
        let (mut loss_sum, mut examples) = (0.0, 0usize);
        let started = Instant::now();
        while state.step < end {
            let idx = sampler.next_batch();
            let batches = split_batch::<T>(train, &idx, opt.virtual_steps);
            let r = dp_sgd_step(&mut state, &mut params, net, &batches, &opt, &schedule)?;
            loss_sum += r.loss_sum;
            examples += r.examples;
            clipped += r.clipped;
        }
        let wall_time_s = started.elapsed().as_secs_f64();
        seen += examples;
        let (train_eval_loss, train_accuracy) = evaluate(net, &params, train, cfg.eval_batch)?;
        let (test_loss, test_accuracy) = evaluate(net, &params, test, cfg.eval_batch)?;
        epochs.push(EpochMetrics {
            epoch: e,
            step: state.step,
            train_loss: if examples > 0 { loss_sum / examples as f64 } else { train_eval_loss },
            train_accuracy,
            test_loss,
            test_accuracy,
            epsilon: epsilon_after(state.step)?,
            wall_time_s,
        });
    }

    let privacy = if private {
        Some(privacy_report(
            plan.sigma,
            plan.q,
            plan.total_steps,
            cfg.privacy.delta,
            &AccountantOptions::default(),
        )?)
    } else {
        None
    };
    let record = RunRecord {
        schema_version: RECORD_SCHEMA,
        name: cfg.name.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        num_params: params.num_elements(),
        trainable_params: params.num_trainable_elements(),
        train_examples: train.len(),
        test_examples: test.len(),
        steps: plan.total_steps,
        sampling_mismatch: sampler.sampling_mismatch(),
        clipped_fraction: if seen > 0 { clipped as f64 / seen as f64 } else { 0.0 },
        final_test_accuracy: epochs.last().map_or(f64::NAN, |m| m.test_accuracy),
        epochs,
        privacy,
    };
    Ok((record, params))
}

fn run_typed<T: Element>(cfg: &ExperimentConfig, splits: &Splits) -> Result<RunRecord> {
    let net = build_network(&cfg.model, &splits.train.example_shape, splits.train.num_classes)?;
    let params = net.init::<T>(derive_seed(cfg.seed, INIT_STREAM));
    let (record, params) = train_on(cfg, &net, params, &splits.train, &splits.test)?;
    if let Some(dir) = &cfg.output_dir {
        write_run(dir, &record)?;
        save_checkpoint(&params, dir.join("params.ckpt"))?;
    }
    Ok(record)
}

/// Trains on already-loaded splits in the configured precision.
pub fn run_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<RunRecord> {
    match cfg.dtype {
        DType::F32 => run_typed::<f32>(cfg, splits),
        DType::F64 => run_typed::<f64>(cfg, splits),
    }
}

/// Loads data, trains, and writes `run.json`, `metrics.csv` and `params.ckpt`
/// when an output directory is configured.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let splits = data::load(&cfg.data)?;
    run_on(cfg, &splits)
}

pub fn write_metrics_csv(out: impl std::io::Write, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in &record.epochs {
        w.serialize(MetricsRow {
            epoch: m.epoch,
            step: m.step,
            train_loss: m.train_loss,
            train_accuracy: m.train_accuracy,
            test_loss: m.test_loss,
            test_accuracy: m.test_accuracy,
            epsilon: m.epsilon,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_run(dir: &Path, record: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("run.json"), record)?;
    write_metrics_csv(std::fs::File::create(dir.join("metrics.csv"))?, record)
}
