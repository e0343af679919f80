//! Stateful helpers shared by the speech and text models.

use super::graph::BatchStats;

/// Momentum used when folding batch statistics into running estimates.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance of a batch-norm layer, used in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Exponential moving average update; the variance uses the unbiased estimate.
    pub fn update(&mut self, batch: &BatchStats) {
        let correction = if batch.count > 1 {
            batch.count as f64 / (batch.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * batch.mean[c];
            self.var[c] = (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * batch.var[c] * correction;
        }
    }
}
