use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant learning rate for a warm period, then repeated halving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    #[serde(default = "default_constant")]
    pub constant_epochs: u32,
    /// Epochs per halving once the constant period ends. `2` halves every
    /// other epoch; `1` halves every epoch.
    #[serde(default = "default_period")]
    pub halving_period: u32,
}

fn default_constant() -> u32 {
    8
}

fn default_period() -> u32 {
    2
}

impl LrSchedule {
    pub fn new(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            constant_epochs: default_constant(),
            halving_period: default_period(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || self.constant_epochs < 1 || self.halving_period < 1 {
            return Err(Error::config(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: u32) -> f64 {
        self.base_lr * self.factor_at(epoch)
    }

    /// Multiplier applied to the base rate at `epoch`.
    pub fn factor_at(&self, epoch: u32) -> f64 {
        if epoch <= self.constant_epochs {
            return 1.0;
        }
        let past = epoch - self.constant_epochs;
        let halvings = past.div_ceil(self.halving_period);
        0.5f64.powi(halvings as i32)
    }
}
