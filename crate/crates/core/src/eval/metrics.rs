//! Confusion matrices, weighted / unweighted accuracy and fold aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::shape("confusion", "matrix must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    /// Classes with no true instances.
    pub fn zero_support(&self) -> Vec<usize> {
        (0..self.n_classes()).filter(|&c| self.support(c) == 0).collect()
    }
}

/// Tallies predictions against labels; both maps must cover the same ids.
pub fn confusion(
    preds: &BTreeMap<String, usize>,
    labels: &BTreeMap<String, usize>,
    n_classes: usize,
) -> Result<ConfusionMatrix> {
    let missing_in_preds: Vec<String> = labels.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    let missing_in_labels: Vec<String> = preds.keys().filter(|k| !labels.contains_key(*k)).cloned().collect();
    if !missing_in_preds.is_empty() || !missing_in_labels.is_empty() {
        return Err(Error::IdMismatch {
            missing_in_first: missing_in_preds,
            missing_in_second: missing_in_labels,
        });
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (id, &t) in labels {
        let p = preds[id];
        for c in [t, p] {
            if c >= n_classes {
                return Err(Error::LabelOutOfRange { label: c, n_classes });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Overall fraction correct.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::input("weighted accuracy of an empty confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Mean per-class recall over classes with non-zero support.
pub fn unweighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 0..cm.n_classes() {
        let support = cm.support(c);
        if support == 0 {
            log::warn!("class {c} has no support; excluded from unweighted accuracy");
            continue;
        }
        sum += cm.counts[c][c] as f64 / support as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::input("unweighted accuracy with every class empty"));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub test_session: u32,
    pub wa: f64,
    pub ua: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FoldMetrics {
    pub fn from_confusion(fold: usize, test_session: u32, confusion: ConfusionMatrix) -> Result<Self> {
        let warnings = confusion
            .zero_support()
            .into_iter()
            .map(|c| format!("class {c} has no support; excluded from UA"))
            .collect();
        Ok(FoldMetrics {
            fold,
            test_session,
            wa: weighted_accuracy(&confusion)?,
            ua: unweighted_accuracy(&confusion)?,
            confusion,
            warnings,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub mean_wa: f64,
    pub mean_ua: f64,
}

/// Unweighted mean of per-fold WA and UA.
pub fn aggregate(folds: Vec<FoldMetrics>) -> Result<MetricsReport> {
    if folds.is_empty() {
        return Err(Error::input("cannot aggregate zero folds"));
    }
    let n = folds.len() as f64;
    let mean_wa = folds.iter().map(|f| f.wa).sum::<f64>() / n;
    let mean_ua = folds.iter().map(|f| f.ua).sum::<f64>() / n;
    Ok(MetricsReport { folds, mean_wa, mean_ua })
}
