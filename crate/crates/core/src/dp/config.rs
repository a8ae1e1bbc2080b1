use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecayMode {
    /// `+λθ` added to the noised, normalized gradient. Data-independent, so free privacy-wise.
    PostClip,
    /// `λ/2·‖θ‖²` added to every example's loss, so it passes through clipping.
    InLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    Cosine,
    Constant,
}

/// How per-example clipping is realised. Both give the same sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMethod {
    /// Per-example norms from one backward pass, then a weighted second pass.
    #[default]
    Fast,
    /// Materialize every per-example gradient.
    Naive,
}

/// Learning-rate schedule expressed in epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    pub shape: ScheduleShape,
}

impl LrSchedule {
    pub fn constant(lr: f64, epochs: f64) -> Self {
        LrSchedule {
            max_lr: lr,
            warmup_epochs: 0.0,
            total_epochs: epochs,
            shape: ScheduleShape::Constant,
        }
    }

    /// Converts epoch boundaries to step counts.
    pub fn resolve(&self, steps_per_epoch: f64) -> StepSchedule {
        let total = (self.total_epochs * steps_per_epoch).round() as u64;
        let warmup = ((self.warmup_epochs * steps_per_epoch).round() as u64).min(total);
        StepSchedule {
            max_lr: self.max_lr,
            warmup_steps: warmup,
            total_steps: total,
            shape: self.shape,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub shape: ScheduleShape,
}

/// Linear warmup from 0 to `max_lr`, then cosine decay to 0 at `total_steps`
/// (or a flat `max_lr` for the constant shape).
pub fn lr_at(t: u64, s: &StepSchedule) -> Result<f64> {
    if t > s.total_steps {
        return Err(invalid(format!("step {t} is past the schedule end {}", s.total_steps)));
    }
    if t < s.warmup_steps {
        return Ok(s.max_lr * t as f64 / s.warmup_steps as f64);
    }
    Ok(match s.shape {
        ScheduleShape::Constant => s.max_lr,
        ScheduleShape::Cosine => {
            let span = s.total_steps - s.warmup_steps;
            if span == 0 {
                0.0
            } else {
                let frac = (t - s.warmup_steps) as f64 / span as f64;
                s.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    })
}

/// Hyperparameters of one private optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdConfig {
    /// Per-example ℓ2 bound; `None` disables clipping (non-private training).
    pub clip_norm: Option<f64>,
    /// Total noise multiplier across all shards.
    pub noise_multiplier: f64,
    #[serde(default = "one")]
    pub shards: usize,
    /// Expected examples per sub-batch.
    pub batch_size: usize,
    #[serde(default = "one")]
    pub virtual_steps: usize,
    pub schedule: LrSchedule,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "post_clip")]
    pub weight_decay_mode: WeightDecayMode,
    #[serde(default)]
    pub clip_method: ClipMethod,
    /// Draw noise shards on separate threads. Never changes the result.
    #[serde(default)]
    pub parallel_shards: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn post_clip() -> WeightDecayMode {
    WeightDecayMode::PostClip
}

impl DpSgdConfig {
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.virtual_steps
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid(format!("clip_norm must be positive, got {c}")));
            }
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(invalid(format!(
                "noise_multiplier must be non-negative, got {}",
                self.noise_multiplier
            )));
        }
        if self.noise_multiplier > 0.0 && self.clip_norm.is_none() {
            return Err(invalid("noise requires a clip_norm"));
        }
        if self.shards == 0 || self.batch_size == 0 || self.virtual_steps == 0 {
            return Err(invalid("shards, batch_size and virtual_steps must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(self.schedule.max_lr >= 0.0) || !(self.schedule.warmup_epochs >= 0.0) || !(self.schedule.total_epochs > 0.0) {
            return Err(invalid("schedule needs max_lr ≥ 0, warmup ≥ 0 and total_epochs > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> StepSchedule {
        StepSchedule {
            max_lr: 0.4,
            warmup_steps: 10,
            total_steps: 110,
            shape: ScheduleShape::Cosine,
        }
    }

    #[test]
    fn schedule_landmarks() {
        let s = sched();
        assert_eq!(lr_at(0, &s).unwrap(), 0.0);
        assert_eq!(lr_at(5, &s).unwrap(), 0.2);
        assert_eq!(lr_at(10, &s).unwrap(), 0.4);
        assert!((lr_at(60, &s).unwrap() - 0.2).abs() < 1e-15);
        assert!(lr_at(110, &s).unwrap().abs() < 1e-15);
        assert!(lr_at(111, &s).is_err());
    }

    #[test]
    fn constant_schedule_holds_after_warmup() {
        let s = StepSchedule {
            shape: ScheduleShape::Constant,
            ..sched()
        };
        assert_eq!(lr_at(110, &s).unwrap(), 0.4);
    }

    #[test]
    fn resolve_rounds_epochs() {
        let s = LrSchedule {
            max_lr: 1.0,
            warmup_epochs: 1.0,
            total_epochs: 10.0,
            shape: ScheduleShape::Cosine,
        }
        .resolve(19.5);
        assert_eq!((s.warmup_steps, s.total_steps), (20, 195));
    }
}
