//! Score-level late fusion of speech and text log-posteriors.

pub mod io;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{confusion, unweighted_accuracy};
use crate::nn::argmax;

/// Floor applied to every normalization standard deviation.
pub const STD_FLOOR: f64 = 1e-8;
/// Fixed speech weight used when no search is run.
pub const PAPER_W1: f64 = 0.94;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Speech,
    Text,
    Fused,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
            Modality::Fused => "fused",
        })
    }
}

/// Per-segment log-posterior vectors of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub modality: Modality,
    pub n_classes: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl ScoreSet {
    pub fn new(modality: Modality, n_classes: usize) -> Self {
        ScoreSet {
            modality,
            n_classes,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, scores: Vec<f64>) -> Result<()> {
        let id = id.into();
        if scores.len() != self.n_classes {
            return Err(Error::shape(
                "score set",
                format!("segment {id} has {} scores, expected {}", scores.len(), self.n_classes),
            ));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("segment {id} has non-finite scores")));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.entries.insert(id, scores);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Restriction to the given ids (ids absent from the set are ignored).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> ScoreSet {
        let mut out = ScoreSet::new(self.modality, self.n_classes);
        for id in ids {
            if let Some(v) = self.entries.get(id) {
                out.entries.insert(id.clone(), v.clone());
            }
        }
        out
    }

    /// Errors unless both sets cover the same ids with the same class count.
    pub fn check_compatible(&self, other: &ScoreSet) -> Result<()> {
        if self.n_classes != other.n_classes {
            return Err(Error::shape(
                "fusion",
                format!("{} classes vs {} classes", self.n_classes, other.n_classes),
            ));
        }
        let missing_in_first: Vec<String> = other.entries.keys().filter(|k| !self.entries.contains_key(*k)).cloned().collect();
        let missing_in_second: Vec<String> = self.entries.keys().filter(|k| !other.entries.contains_key(*k)).cloned().collect();
        if !missing_in_first.is_empty() || !missing_in_second.is_empty() {
            return Err(Error::IdMismatch {
                missing_in_first,
                missing_in_second,
            });
        }
        Ok(())
    }
}

/// Speech weight `w1`; the text weight is `1 − w1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    w1: f64,
}

impl FusionWeights {
    pub fn new(w1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w1) {
            return Err(Error::config(format!("fusion weight w1 = {w1} outside [0, 1]")));
        }
        Ok(FusionWeights { w1 })
    }

    pub fn paper() -> Self {
        FusionWeights { w1: PAPER_W1 }
    }

    pub fn w1(&self) -> f64 {
        self.w1
    }

    pub fn w2(&self) -> f64 {
        1.0 - self.w1
    }
}

/// `w1 · speech + (1 − w1) · text` per segment. The endpoints return the
/// corresponding input unchanged.
pub fn fuse(speech: &ScoreSet, text: &ScoreSet, weights: FusionWeights) -> Result<ScoreSet> {
    speech.check_compatible(text)?;
    let (w1, w2) = (weights.w1(), weights.w2());
    let mut out = ScoreSet::new(Modality::Fused, speech.n_classes);
    for (id, s) in &speech.entries {
        let t = &text.entries[id];
        let fused = if w1 == 1.0 {
            s.clone()
        } else if w1 == 0.0 {
            t.clone()
        } else {
            s.iter().zip(t).map(|(a, b)| w1 * a + w2 * b).collect()
        };
        out.entries.insert(id.clone(), fused);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Separate mean and deviation per class.
    #[default]
    PerClass,
    /// One mean and deviation over all classes' scores.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub modality: Modality,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population standard deviation over a hold-out set.
pub fn estimate_norm_stats(holdout: &ScoreSet, mode: NormMode) -> Result<NormStats> {
    if holdout.len() < 2 {
        return Err(Error::input(format!(
            "normalization statistics need at least 2 segments, got {}",
            holdout.len()
        )));
    }
    let k = holdout.n_classes;
    let n = holdout.len() as f64;
    let (mean, std) = match mode {
        NormMode::PerClass => {
            let mut mean = vec![0.0; k];
            for (_, v) in holdout.iter() {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; k];
            for (_, v) in holdout.iter() {
                for c in 0..k {
                    var[c] += (v[c] - mean[c]).powi(2);
                }
            }
            let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
            (mean, std)
        }
        NormMode::Pooled => {
            let total = n * k as f64;
            let m = holdout.iter().flat_map(|(_, v)| v.iter()).sum::<f64>() / total;
            let var = holdout.iter().flat_map(|(_, v)| v.iter()).map(|x| (x - m).powi(2)).sum::<f64>() / total;
            (vec![m; k], vec![var.sqrt().max(STD_FLOOR); k])
        }
    };
    Ok(NormStats {
        modality: holdout.modality,
        mean,
        std,
    })
}

/// `(S − μ) / σ` per class.
pub fn znorm(scores: &ScoreSet, stats: &NormStats) -> Result<ScoreSet> {
    if stats.modality != scores.modality {
        return Err(Error::input(format!(
            "no normalization statistics for {} scores (have {})",
            scores.modality, stats.modality
        )));
    }
    if stats.mean.len() != scores.n_classes || stats.std.len() != scores.n_classes {
        return Err(Error::shape("znorm", "statistics and scores differ in class count"));
    }
    let mut out = ScoreSet::new(scores.modality, scores.n_classes);
    for (id, v) in scores.iter() {
        let z = v
            .iter()
            .zip(&stats.mean)
            .zip(&stats.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        out.entries.insert(id.to_string(), z);
    }
    Ok(out)
}

/// Highest-scoring class per segment, ties toward the lower index.
pub fn classify(scores: &ScoreSet) -> Result<BTreeMap<String, usize>> {
    if scores.is_empty() {
        return Err(Error::input("cannot classify an empty score set"));
    }
    Ok(scores.iter().map(|(id, v)| (id.to_string(), argmax(v))).collect())
}

/// Unweighted accuracy of the argmax decisions against `labels`.
pub fn score_ua(scores: &ScoreSet, labels: &BTreeMap<String, usize>) -> Result<f64> {
    let preds = classify(scores)?;
    let wanted: BTreeMap<String, usize> = preds
        .keys()
        .map(|id| {
            labels
                .get(id)
                .map(|&l| (id.clone(), l))
                .ok_or_else(|| Error::input(format!("no label for segment {id}")))
        })
        .collect::<Result<_>>()?;
    unweighted_accuracy(&confusion(&preds, &wanted, scores.n_classes)?)
}

/// `0.00, 0.01, …, 1.00`.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Hold-out UA at every grid weight and the best weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub grid: Vec<f64>,
    pub ua: Vec<f64>,
    pub best_w1: f64,
}

/// Picks the speech weight maximising hold-out UA; ties go to the smaller weight.
pub fn search_weight(
    speech: &ScoreSet,
    text: &ScoreSet,
    labels: &BTreeMap<String, usize>,
    grid: &[f64],
) -> Result<WeightSearch> {
    if grid.is_empty() {
        return Err(Error::config("weight grid is empty"));
    }
    let mut ua = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &w in grid {
        let u = score_ua(&fuse(speech, text, FusionWeights::new(w)?)?, labels)?;
        ua.push(u);
        best = match best {
            Some((bu, bw)) if bu > u || (bu == u && bw <= w) => Some((bu, bw)),
            _ => Some((u, w)),
        };
    }
    Ok(WeightSearch {
        grid: grid.to_vec(),
        ua,
        best_w1: best.unwrap().1,
    })
}

/// Z-normalizes each modality with hold-out statistics, then averages with equal weights.
pub fn equal_weight_fusion(
    speech: &ScoreSet,
    text: &ScoreSet,
    holdout_speech: &ScoreSet,
    holdout_text: &ScoreSet,
    mode: NormMode,
) -> Result<ScoreSet> {
    let s = znorm(speech, &estimate_norm_stats(holdout_speech, mode)?)?;
    let t = znorm(text, &estimate_norm_stats(holdout_text, mode)?)?;
    fuse(&s, &t, FusionWeights::new(0.5)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(modality: Modality, rows: &[(&str, [f64; 4])]) -> ScoreSet {
        let mut s = ScoreSet::new(modality, 4);
        for (id, v) in rows {
            s.insert(*id, v.to_vec()).unwrap();
        }
        s
    }

    #[test]
    fn worked_fusion_example() {
        let s = set(Modality::Speech, &[("a", [-0.1, -2.4, -3.0, -3.2])]);
        let t = set(Modality::Text, &[("a", [-1.5, -0.4, -2.0, -2.5])]);
        let f = fuse(&s, &t, FusionWeights::new(0.5).unwrap()).unwrap();
        for (x, y) in f.get("a").unwrap().iter().zip([-0.8, -1.4, -2.5, -2.85]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(classify(&f).unwrap()["a"], 0);
        assert_eq!(fuse(&s, &t, FusionWeights::new(1.0).unwrap()).unwrap().get("a"), s.get("a"));
        assert_eq!(FusionWeights::paper().w1(), 0.94);
        assert!(FusionWeights::new(1.5).is_err());
    }

    #[test]
    fn mismatched_ids_reported() {
        let s = set(Modality::Speech, &[("a", [0.0; 4]), ("b", [0.0; 4])]);
        let t = set(Modality::Text, &[("a", [0.0; 4]), ("c", [0.0; 4])]);
        match fuse(&s, &t, FusionWeights::new(0.5).unwrap()) {
            Err(Error::IdMismatch {
                missing_in_first,
                missing_in_second,
            }) => {
                assert_eq!(missing_in_first, vec!["c"]);
                assert_eq!(missing_in_second, vec!["b"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn norm_stats_and_znorm() {
        let h = set(
            Modality::Speech,
            &[("a", [-1.0, 0.0, 0.0, 0.0]), ("b", [-2.0, 0.0, 0.0, 0.0]), ("c", [-3.0, 0.0, 0.0, 0.0])],
        );
        let st = estimate_norm_stats(&h, NormMode::PerClass).unwrap();
        assert!((st.mean[0] + 2.0).abs() < 1e-15);
        assert!((st.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(st.std[1], STD_FLOOR);
        let z = znorm(&h, &st).unwrap();
        assert!((z.get("c").unwrap()[0] + 1.224_744_871).abs() < 1e-8);
        assert_eq!(z.get("a").unwrap()[1], 0.0);
        let text_stats = NormStats {
            modality: Modality::Text,
            ..st
        };
        assert!(znorm(&h, &text_stats).is_err());
        assert!(estimate_norm_stats(&h.subset(&["a".to_string()]), NormMode::PerClass).is_err());
    }

    #[test]
    fn classify_ties_low() {
        let s = set(Modality::Fused, &[("a", [-1.0, -0.5, -0.5, -2.0])]);
        assert_eq!(classify(&s).unwrap()["a"], 1);
        assert!(classify(&ScoreSet::new(Modality::Fused, 4)).is_err());
    }

    #[test]
    fn search_prefers_informative_text() {
        let labels: BTreeMap<String, usize> = (0..8).map(|i| (format!("s{i}"), i % 4)).collect();
        let mut speech = ScoreSet::new(Modality::Speech, 4);
        let mut text = ScoreSet::new(Modality::Text, 4);
        for (id, &l) in &labels {
            let mut t = vec![-5.0; 4];
            t[l] = -0.01;
            text.insert(id.clone(), t).unwrap();
            let mut s = vec![-2.0; 4];
            s[(l + 1) % 4] = -0.5;
            speech.insert(id.clone(), s).unwrap();
        }
        let r = search_weight(&speech, &text, &labels, &default_grid()).unwrap();
        assert_eq!(r.best_w1, 0.0);
        assert_eq!(r.ua.len(), 101);
        let same = search_weight(&text, &text, &labels, &default_grid()).unwrap();
        assert!(same.ua.iter().all(|&u| u == same.ua[0]));
        assert_eq!(same.best_w1, 0.0);
        assert!(search_weight(&speech, &text, &labels, &[]).is_err());
    }
}
