//! Experiment orchestration for `dpscale-core`: JSON-configured training
//! runs, accountant queries, clip/learning-rate tuning, fixed-ε sweeps,
//! public-to-private fine-tuning and clipping benchmarks.

pub mod bench;
pub mod config;
pub mod curves;
pub mod data;
mod error;
pub mod finetune;
pub mod pool;
pub mod train;
pub mod tune;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use train::RunRecord;
