//! Run configuration: a preset base, optionally overridden by a TOML file and
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use emofuse_core::augment::AugmentPolicy;
use emofuse_core::eval::{SpeakerCorpusSpec, SynthSpec, N_EMOTIONS};
use emofuse_core::frontend::FrontendConfig;
use emofuse_core::fusion::NormMode;
use emofuse_core::speech::{ResNetConfig, SpeechHyper, TransferMode};
use emofuse_core::text::{TextHyper, TransformerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    /// Full-size models and the published hyperparameters.
    Paper,
    /// Small models and short schedules that run on a laptop CPU.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: PresetName,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for per-fold and per-segment work.
    pub jobs: usize,
    pub data: DataConfig,
    pub frontend: FrontendConfig,
    pub pretrain: PretrainConfig,
    pub speech: SpeechConfig,
    pub text: TextConfig,
    pub fusion: FusionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Existing emotion manifest; when absent the synthetic corpus is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub synth: SynthSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub enabled: bool,
    /// Existing speaker-labelled manifest; when absent a synthetic one is generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub corpus: SpeakerCorpusSpec,
    pub lr: f64,
    pub hyper: SpeechHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechConfig {
    pub model: ResNetConfig,
    pub transfer: TransferMode,
    pub hyper: SpeechHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    pub model: TransformerConfig,
    pub min_freq: usize,
    pub hyper: TextHyper,
    /// Text scores from an external model, used instead of training one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_scores: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// Weighted sum with a fixed or searched speech weight.
    BestWeight,
    /// Z-normalized scores averaged with equal weights.
    EqualWeight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Strategy reported as the primary fused system.
    pub strategy: FusionStrategy,
    /// Search the speech weight on the hold-out session instead of using `w1`.
    pub search_weight: bool,
    pub w1: f64,
    pub grid_step: f64,
    pub norm: NormMode,
}

impl FusionConfig {
    pub fn grid(&self) -> Vec<f64> {
        let steps = (1.0 / self.grid_step).round() as usize;
        (0..=steps).map(|i| i as f64 / steps as f64).collect()
    }
}

impl RunConfig {
    pub fn preset(name: PresetName) -> Self {
        match name {
            PresetName::Paper => Self::paper(),
            PresetName::Desk => Self::desk(),
        }
    }

    pub fn paper() -> Self {
        RunConfig {
            preset: PresetName::Paper,
            seed: 7,
            out: PathBuf::from("runs/paper"),
            jobs: 1,
            data: DataConfig {
                manifest: None,
                synth: SynthSpec {
                    complementarity: 0.3,
                    ..SynthSpec::default()
                },
            },
            frontend: FrontendConfig::default(),
            pretrain: PretrainConfig {
                enabled: true,
                manifest: None,
                corpus: SpeakerCorpusSpec::default(),
                lr: 0.1,
                hyper: SpeechHyper::default(),
            },
            speech: SpeechConfig {
                model: ResNetConfig::full(N_EMOTIONS),
                transfer: TransferMode::fine_tune(0.1, 1e-3),
                hyper: SpeechHyper::default(),
            },
            text: TextConfig {
                model: TransformerConfig::full(),
                min_freq: 1,
                hyper: TextHyper {
                    lr: 2e-5,
                    ..TextHyper::default()
                },
                external_scores: None,
            },
            fusion: FusionConfig {
                strategy: FusionStrategy::BestWeight,
                search_weight: false,
                w1: emofuse_core::fusion::PAPER_W1,
                grid_step: 0.01,
                norm: NormMode::PerClass,
            },
        }
    }

    pub fn desk() -> Self {
        let quick = SpeechHyper {
            epochs: 15,
            augment: AugmentPolicy::none(),
            target_accuracy: Some(0.9),
            ..SpeechHyper::default()
        };
        RunConfig {
            preset: PresetName::Desk,
            out: PathBuf::from("runs/desk"),
            // A 40-segment hold-out session is too coarse to place the fusion weight.
            data: DataConfig {
                manifest: None,
                synth: SynthSpec {
                    segments_per_speaker: 30,
                    ..Self::paper().data.synth
                },
            },
            pretrain: PretrainConfig {
                hyper: quick.clone(),
                ..Self::paper().pretrain
            },
            speech: SpeechConfig {
                model: ResNetConfig {
                    first_block_channels: 8,
                    ..ResNetConfig::desk(N_EMOTIONS)
                },
                transfer: TransferMode::fine_tune(0.1, 1e-3),
                hyper: SpeechHyper {
                    augment: AugmentPolicy::conservative(),
                    copies: 1,
                    target_accuracy: Some(0.97),
                    ..quick
                },
            },
            text: TextConfig {
                model: TransformerConfig::desk(),
                min_freq: 1,
                hyper: TextHyper {
                    epochs: 20,
                    target_accuracy: Some(0.9),
                    ..TextHyper::default()
                },
                external_scores: None,
            },
            fusion: FusionConfig {
                search_weight: true,
                ..Self::paper().fusion
            },
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        self.frontend.validate()?;
        if self.data.manifest.is_none() {
            self.data.synth.validate()?;
            if self.data.synth.sample_rate != self.frontend.sample_rate {
                bail!("synthetic corpus sample rate differs from the front end's");
            }
        }
        if self.pretrain.enabled && self.pretrain.manifest.is_none() {
            self.pretrain.corpus.validate()?;
        }
        self.speech.model.validate()?;
        if self.speech.model.n_mels != self.frontend.n_mels {
            bail!(
                "speech model expects {} mel bins but the front end produces {}",
                self.speech.model.n_mels,
                self.frontend.n_mels
            );
        }
        if self.speech.model.n_classes != N_EMOTIONS || self.text.model.n_classes != N_EMOTIONS {
            bail!("emotion models must have {N_EMOTIONS} classes");
        }
        let min_frames = self.speech.model.min_frames();
        for hyper in [&self.speech.hyper, &self.pretrain.hyper] {
            hyper.validate()?;
            if let Some(&short) = hyper.chunk_set.iter().find(|&&c| c < min_frames) {
                bail!("chunk length {short} is below the model minimum of {min_frames} frames");
            }
        }
        self.speech.transfer.validate()?;
        self.text.model.validate()?;
        if !(self.fusion.grid_step > 0.0 && self.fusion.grid_step <= 1.0) {
            bail!("fusion grid_step must lie in (0, 1]");
        }
        emofuse_core::fusion::FusionWeights::new(self.fusion.w1)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Seed for one stochastic stage, derived from the run seed.
    pub fn derive_seed(&self, stage: &str, index: u64) -> u64 {
        derive_seed(self.seed, stage, index)
    }
}

pub fn derive_seed(seed: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Values given on the command line, applied after the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<PresetName>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Preset base (from the flag, else the file's `preset` key, else desk),
/// overlaid with the config file and then the flags.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let user: toml::Table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.parse().with_context(|| format!("parsing {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    let preset = match overrides.preset {
        Some(p) => p,
        None => match user.get("preset") {
            Some(v) => PresetName::deserialize(v.clone()).context("invalid preset in config file")?,
            None => PresetName::Desk,
        },
    };
    let mut merged = toml::Table::try_from(RunConfig::preset(preset))?;
    merge(&mut merged, user);
    merged.insert("preset".into(), toml::Value::try_from(preset)?);
    let mut config: RunConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow::anyhow!("invalid config: {e}"))?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(jobs) = overrides.jobs {
        config.jobs = jobs;
    }
    if let Some(out) = &overrides.out {
        config.out = out.clone();
    }
    config.validate()?;
    Ok(config)
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
