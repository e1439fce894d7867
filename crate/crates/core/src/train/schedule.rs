use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    /// Advance the schedule every optimizer step instead of every epoch.
    pub per_step: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 15,
            total_epochs: 300,
            lr_peak: 3e-4,
            lr_floor: 0.0,
            per_step: false,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(Error::config(format!(
                "need 0 < warmup_epochs ({}) < total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.lr_peak >= 0.0 && self.lr_floor >= 0.0 && self.lr_floor <= self.lr_peak) {
            return Err(Error::config("need 0 ≤ lr_floor ≤ lr_peak"));
        }
        Ok(())
    }

    /// Learning rate at a fractional epoch position.
    ///
    /// Linear warmup reaches `lr_peak` on the last warmup epoch; the cosine
    /// then runs from `lr_peak` at the first post-warmup epoch down to
    /// exactly `lr_floor` at the last epoch.
    pub fn lr_at_progress(&self, progress: f64) -> f64 {
        let w = self.warmup_epochs as f64;
        if progress < w {
            return self.lr_peak * ((progress + 1.0) / w).min(1.0);
        }
        let span = (self.total_epochs - self.warmup_epochs - 1).max(1) as f64;
        let frac = ((progress - w) / span).clamp(0.0, 1.0);
        self.lr_floor + 0.5 * (self.lr_peak - self.lr_floor) * (1.0 + (PI * frac).cos())
    }
}

pub fn lr_at(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    if epoch >= cfg.total_epochs {
        return Err(Error::validation(format!(
            "epoch {epoch} outside 0..{}",
            cfg.total_epochs
        )));
    }
    Ok(cfg.lr_at_progress(epoch as f64))
}
