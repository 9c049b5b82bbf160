use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of steps spent warming up.
pub const WARMUP_FRACTION: f64 = 0.10;

/// Linear warmup from 0 to `peak_lr` over the first 10% of steps, then
/// linear decay to 0 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub total_steps: usize,
}

impl ScheduleConfig {
    pub fn new(peak_lr: f64, total_steps: usize) -> Result<Self> {
        if !(peak_lr > 0.0 && peak_lr.is_finite()) {
            return Err(Error::config("train.peak_lr", "must be positive"));
        }
        if total_steps == 0 {
            return Err(Error::config("train.total_steps", "must be positive"));
        }
        Ok(Self {
            peak_lr,
            total_steps,
        })
    }

    /// `⌈0.1 · total⌉`, the step where the rate peaks.
    pub fn warmup_steps(&self) -> usize {
        (WARMUP_FRACTION * self.total_steps as f64).ceil() as usize
    }
}

pub fn lr_at(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    let total = cfg.total_steps;
    if step > total {
        return Err(Error::contract(
            "lr_at",
            format!("step {step} beyond total {total}"),
        ));
    }
    let w = cfg.warmup_steps();
    Ok(if step <= w {
        cfg.peak_lr * (step as f64 / w as f64)
    } else {
        cfg.peak_lr * ((total - step) as f64 / (total - w) as f64)
    })
}
