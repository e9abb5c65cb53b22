use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup from 0 to `base_lr`, then cosine annealing to 0 at
/// `total_epochs`. Epochs are fractional so the rate can change every step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Result<Self> {
        let s = Schedule {
            base_lr,
            warmup_epochs,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be < epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be >= 0, got {}", self.base_lr)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: f64) -> Result<f64> {
        let total = self.total_epochs as f64;
        if !(0.0..=total).contains(&epoch) {
            return Err(Error::Contract(format!("epoch {epoch} outside [0, {total}]")));
        }
        let warm = self.warmup_epochs as f64;
        if epoch < warm {
            return Ok(self.base_lr * epoch / warm);
        }
        let progress = (epoch - warm) / (total - warm);
        Ok(self.base_lr * 0.5 * (1.0 + (PI * progress).cos()))
    }
}
