use serde::{Deserialize, Serialize};

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Mean cross-entropy over the epoch's examples.
    pub loss: f64,
    /// Fraction of training examples classified correctly during the epoch.
    pub accuracy: f64,
    /// Learning rate applied to the classification head.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn best_accuracy(&self) -> f64 {
        self.epochs.iter().map(|e| e.accuracy).fold(0.0, f64::max)
    }
}
