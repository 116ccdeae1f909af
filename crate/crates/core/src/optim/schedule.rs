use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup followed by cosine decay to a floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub total_steps: u64,
    pub warmup_ratio: f64,
    /// Final learning rate as a fraction of the peak.
    pub floor_fraction: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            warmup_ratio: 0.02,
            floor_fraction: 0.1,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("schedule.warmup_ratio must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return Err(Error::Config("schedule.floor_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_ratio * self.total_steps as f64).ceil() as u64
    }
}

/// Learning rate at `step` (0-based position on the schedule; training step
/// `k` uses `cosine_lr(k, ..)` for k in 1..=total_steps).
pub fn cosine_lr(step: u64, sched: &Schedule, peak: f64) -> Result<f64> {
    if step > sched.total_steps {
        return Err(Error::Domain(format!(
            "step {step} beyond schedule length {}",
            sched.total_steps
        )));
    }
    let warm = sched.warmup_steps();
    if step < warm {
        return Ok(peak * step as f64 / warm as f64);
    }
    let floor = sched.floor_fraction * peak;
    let span = sched.total_steps - warm;
    if span == 0 {
        return Ok(peak);
    }
    let progress = (step - warm) as f64 / span as f64;
    Ok(floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
