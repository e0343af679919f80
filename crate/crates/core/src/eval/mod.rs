//! Dataset modelling, cross-validation splits, metrics and the synthetic corpus.

pub mod folds;
pub mod manifest;
pub mod metrics;
pub mod report;
pub mod synth;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use folds::{loso_folds, FoldPlan};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use metrics::{aggregate, confusion, unweighted_accuracy, weighted_accuracy, ConfusionMatrix, FoldMetrics, MetricsReport};
pub use synth::{generate_speaker_corpus, generate_synthetic_corpus, SpeakerCorpusSpec, SynthCorpus, SynthSpec};

pub const N_EMOTIONS: usize = 4;

/// The four-class emotion space, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Emotion {
    Angry,
    HappyExcited,
    Neutral,
    Sad,
}

impl Emotion {
    pub const ALL: [Emotion; N_EMOTIONS] = [Emotion::Angry, Emotion::HappyExcited, Emotion::Neutral, Emotion::Sad];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::LabelOutOfRange {
            label: i,
            n_classes: N_EMOTIONS,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::HappyExcited => "happy_excited",
            Emotion::Neutral => "neutral",
            Emotion::Sad => "sad",
        }
    }

    pub fn parse(raw: &str) -> Result<Self> {
        Self::from_index(map_labels(raw)?)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Emotion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Emotion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Emotion::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Maps a raw annotation label to its class index, merging happy and excited.
pub fn map_labels(raw: &str) -> Result<usize> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "angry" => Ok(0),
        "happy" | "excited" | "happy_excited" => Ok(1),
        "neutral" => Ok(2),
        "sad" => Ok(3),
        _ => Err(Error::UnknownLabel(raw.to_string())),
    }
}
