//! Random time and frequency stripe masking of spectrograms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::LogMelSpectrogram;
use crate::probe;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub name: String,
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    pub n_time_masks: usize,
    pub max_time_frac: f64,
    #[serde(default)]
    pub mask_value: f64,
}

impl AugmentPolicy {
    pub fn conservative() -> Self {
        AugmentPolicy {
            name: "conservative".into(),
            n_freq_masks: 2,
            max_freq_width: 8,
            n_time_masks: 2,
            max_time_frac: 0.05,
            mask_value: 0.0,
        }
    }

    pub fn aggressive() -> Self {
        AugmentPolicy {
            name: "aggressive".into(),
            n_freq_masks: 2,
            max_freq_width: 16,
            n_time_masks: 2,
            max_time_frac: 0.10,
            mask_value: 0.0,
        }
    }

    /// Policy that masks nothing.
    pub fn none() -> Self {
        AugmentPolicy {
            name: "none".into(),
            n_freq_masks: 0,
            max_freq_width: 0,
            n_time_masks: 0,
            max_time_frac: 0.0,
            mask_value: 0.0,
        }
    }

    /// True when the policy never masks anything.
    pub fn is_identity(&self) -> bool {
        self.n_freq_masks == 0 && self.n_time_masks == 0
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "conservative" => Ok(Self::conservative()),
            "aggressive" => Ok(Self::aggressive()),
            "none" => Ok(Self::none()),
            other => Err(Error::config(format!("unknown augmentation policy {other:?}"))),
        }
    }

    pub fn validate(&self, n_mels: usize) -> Result<()> {
        if self.max_freq_width > n_mels {
            return Err(Error::config(format!(
                "max_freq_width {} exceeds {n_mels} mel bins",
                self.max_freq_width
            )));
        }
        if !(0.0..=1.0).contains(&self.max_time_frac) {
            return Err(Error::config("max_time_frac must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Widest time mask for a spectrogram of `n_frames` frames.
    pub fn max_time_width(&self, n_frames: usize) -> usize {
        (self.max_time_frac * n_frames as f64).round() as usize
    }
}

/// A placed stripe: `start..start + width` along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stripe {
    pub start: usize,
    pub width: usize,
}

/// Frequency stripes then time stripes, in draw order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskPlan {
    pub freq: Vec<Stripe>,
    pub time: Vec<Stripe>,
}

fn draw(rng: &mut (impl Rng + ?Sized), extent: usize, max_width: usize) -> Stripe {
    let width = rng.random_range(0..=max_width.min(extent));
    let start = rng.random_range(0..=extent - width);
    Stripe { start, width }
}

/// Draws mask positions for a `n_frames × n_mels` spectrogram.
pub fn plan_masks<R: Rng + ?Sized>(n_frames: usize, n_mels: usize, policy: &AugmentPolicy, rng: &mut R) -> MaskPlan {
    let max_t = policy.max_time_width(n_frames);
    MaskPlan {
        freq: (0..policy.n_freq_masks)
            .map(|_| draw(rng, n_mels, policy.max_freq_width))
            .collect(),
        time: (0..policy.n_time_masks).map(|_| draw(rng, n_frames, max_t)).collect(),
    }
}

/// Applies a masking policy, returning the masked copy.
pub fn apply_masks<R: Rng + ?Sized>(
    spec: &LogMelSpectrogram,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<LogMelSpectrogram> {
    Ok(apply_masks_with_plan(spec, policy, rng)?.0)
}

/// As [`apply_masks`], also returning where the stripes were placed.
pub fn apply_masks_with_plan<R: Rng + ?Sized>(
    spec: &LogMelSpectrogram,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<(LogMelSpectrogram, MaskPlan)> {
    policy.validate(spec.n_mels)?;
    probe::record_mask();
    let plan = plan_masks(spec.n_frames, spec.n_mels, policy, rng);
    let mut out = spec.clone();
    let m = spec.n_mels;
    for s in &plan.freq {
        for t in 0..spec.n_frames {
            out.data[t * m + s.start..t * m + s.start + s.width].fill(policy.mask_value);
        }
    }
    for s in &plan.time {
        out.data[s.start * m..(s.start + s.width) * m].fill(policy.mask_value);
    }
    Ok((out, plan))
}

/// Originals followed by `copies` masked variants, per input in order.
pub fn augment_batch<R: Rng + ?Sized>(
    specs: &[LogMelSpectrogram],
    policy: &AugmentPolicy,
    copies: usize,
    rng: &mut R,
) -> Result<Vec<LogMelSpectrogram>> {
    let mut out = Vec::with_capacity(specs.len() * (1 + copies));
    for spec in specs {
        out.push(spec.clone());
        for _ in 0..copies {
            out.push(apply_masks(spec, policy, rng)?);
        }
    }
    Ok(out)
}
