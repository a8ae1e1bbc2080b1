//! The private optimizer: per-example clipping, sharded Gaussian noise,
//! virtual-step accumulation, learning-rate schedules and Nesterov momentum.

mod clip;
mod config;
mod noise;
mod step;

pub use clip::{clip, clip_weight, clipped_grad_sum, ClippedSum};
pub use config::{lr_at, ClipMethod, DpSgdConfig, LrSchedule, ScheduleShape, StepSchedule, WeightDecayMode};
pub use noise::{add_noise, shard_rng};
pub use step::{dp_sgd_step, private_gradient, Batch, OptimizerState, StepReport};
