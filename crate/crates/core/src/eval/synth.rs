//! Seeded synthetic stand-ins for an acted-emotion corpus and a
//! speaker-labelled pretraining corpus.
//!
//! Each emotion class has an audio signature (band-limited carrier around a
//! class centre frequency, amplitude-modulated at a class rate) and a keyword
//! list. Speakers add a harmonic timbre and shift the carrier band slightly.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Emotion, ManifestEntry, N_EMOTIONS};
use crate::error::{Error, Result};
use crate::frontend::WaveSegment;

const BAND_TONES: usize = 8;
const HARMONICS: usize = 8;
const AM_DEPTH: f64 = 0.8;
const PEAK: f64 = 0.9;

const KEYWORDS: [&[&str]; N_EMOTIONS] = [
    &["furious", "hate", "unfair", "shouting", "annoyed", "ridiculous", "mad", "stupid"],
    &["wonderful", "great", "love", "amazing", "excited", "fantastic", "glad", "celebrate"],
    &["okay", "meeting", "schedule", "tuesday", "report", "address", "usual", "fine"],
    &["lonely", "miss", "crying", "lost", "tired", "sorry", "funeral", "hopeless"],
];

const FILLERS: &[&str] = &[
    "i", "you", "we", "it", "was", "is", "the", "a", "that", "just", "so", "really", "know", "think", "about", "this",
    "there", "then", "what", "and",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_sessions: u32,
    pub speakers_per_session: usize,
    pub segments_per_speaker: usize,
    pub class_priors: [f64; N_EMOTIONS],
    pub audio_snr_db: f64,
    /// Probability that a keyword is drawn from another class's list.
    pub text_ambiguity: f64,
    /// Fraction of segments made uninformative in exactly one modality.
    pub complementarity: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub sample_rate: u32,
    pub class_band_hz: [f64; N_EMOTIONS],
    pub class_am_hz: [f64; N_EMOTIONS],
    /// Relative width of the carrier band around its centre.
    pub band_width: f64,
    /// Maximum relative per-speaker shift of the carrier band.
    pub speaker_band_jitter: f64,
    /// Timbre RMS relative to the emotion carrier.
    pub timbre_level: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_sessions: 5,
            speakers_per_session: 2,
            segments_per_speaker: 20,
            class_priors: [0.25; N_EMOTIONS],
            audio_snr_db: 10.0,
            text_ambiguity: 0.05,
            complementarity: 0.0,
            min_duration_s: 1.5,
            max_duration_s: 3.0,
            sample_rate: 16_000,
            class_band_hz: [2200.0, 1500.0, 1000.0, 650.0],
            class_am_hz: [7.0, 5.0, 3.0, 1.5],
            band_width: 0.2,
            speaker_band_jitter: 0.08,
            timbre_level: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic corpus: {m}")));
        if self.n_sessions == 0 || self.speakers_per_session == 0 || self.segments_per_speaker == 0 {
            return bad("counts must be positive");
        }
        if self.class_priors.iter().any(|&p| !(p >= 0.0)) || self.class_priors.iter().sum::<f64>() <= 0.0 {
            return bad("class priors must be non-negative with a positive sum");
        }
        for (name, v) in [
            ("text_ambiguity", self.text_ambiguity),
            ("complementarity", self.complementarity),
            ("band_width", self.band_width),
            ("speaker_band_jitter", self.speaker_band_jitter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return bad("need 0 < min_duration_s <= max_duration_s");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let top = (1.0 + self.speaker_band_jitter) * (1.0 + self.band_width);
        if self.class_band_hz.iter().any(|&f| !(f > 0.0 && f * top < nyquist)) {
            return bad("carrier bands must lie below Nyquist");
        }
        if !self.audio_snr_db.is_finite() || self.timbre_level < 0.0 {
            return bad("snr must be finite and timbre level non-negative");
        }
        Ok(())
    }

    pub fn n_segments(&self) -> usize {
        self.n_sessions as usize * self.speakers_per_session * self.segments_per_speaker
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakerCorpusSpec {
    pub n_speakers: usize,
    pub segments_per_speaker: usize,
    pub audio_snr_db: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub sample_rate: u32,
    pub band_range_hz: (f64, f64),
    pub am_range_hz: (f64, f64),
    pub band_width: f64,
    pub timbre_level: f64,
}

impl Default for SpeakerCorpusSpec {
    fn default() -> Self {
        SpeakerCorpusSpec {
            n_speakers: 20,
            segments_per_speaker: 30,
            audio_snr_db: 10.0,
            min_duration_s: 1.5,
            max_duration_s: 3.0,
            sample_rate: 16_000,
            band_range_hz: (500.0, 2800.0),
            am_range_hz: (1.0, 8.0),
            band_width: 0.2,
            timbre_level: 0.5,
        }
    }
}

impl SpeakerCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::config("speaker corpus needs at least 2 speakers"));
        }
        if self.segments_per_speaker == 0 {
            return Err(Error::config("segments_per_speaker must be positive"));
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return Err(Error::config("need 0 < min_duration_s <= max_duration_s"));
        }
        let (lo, hi) = self.band_range_hz;
        if !(0.0 < lo && lo <= hi && hi * (1.0 + self.band_width) < self.sample_rate as f64 / 2.0) {
            return Err(Error::config("speaker band range must lie below Nyquist"));
        }
        if !(self.am_range_hz.0 >= 0.0 && self.am_range_hz.0 <= self.am_range_hz.1) {
            return Err(Error::config("invalid amplitude-modulation range"));
        }
        Ok(())
    }
}

/// Generated manifest plus waveforms (in manifest order).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub manifest: DatasetManifest,
    pub waves: Vec<WaveSegment>,
    /// Segments whose audio carries no class signature.
    pub ambiguous_audio: BTreeSet<String>,
    /// Segments whose transcript carries no keyword.
    pub ambiguous_text: BTreeSet<String>,
}

impl SynthCorpus {
    pub fn wave(&self, id: &str) -> Option<&WaveSegment> {
        self.waves.iter().find(|w| w.segment_id == id)
    }
}

/// Per-speaker voice parameters.
struct Voice {
    f0: f64,
    tilt: f64,
    band_factor: f64,
}

impl Voice {
    fn random(rng: &mut ChaCha8Rng, jitter: f64) -> Self {
        Voice {
            f0: rng.random_range(90.0..260.0),
            tilt: rng.random_range(0.6..1.4),
            band_factor: 1.0 + jitter * rng.random_range(-1.0..=1.0),
        }
    }
}

/// Band-limited carrier around `centre`, amplitude-modulated at `am` Hz, unit-ish RMS.
fn carrier(rng: &mut ChaCha8Rng, n: usize, sr: f64, centre: f64, width: f64, am: f64) -> Vec<f64> {
    let tones: Vec<(f64, f64)> = (0..BAND_TONES)
        .map(|_| {
            let f = centre * (1.0 + width * rng.random_range(-1.0..=1.0));
            (f, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let gain = (2.0 / BAND_TONES as f64).sqrt();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 1.0 + AM_DEPTH * (2.0 * PI * am * t + am_phase).sin();
            let s: f64 = tones.iter().map(|&(f, p)| (2.0 * PI * f * t + p).sin()).sum();
            gain * env * s
        })
        .collect()
}

/// Harmonic series on the speaker's f0 with spectral tilt, unit RMS.
fn timbre(rng: &mut ChaCha8Rng, n: usize, sr: f64, voice: &Voice) -> Vec<f64> {
    let amps: Vec<f64> = (1..=HARMONICS).map(|h| (h as f64).powf(-voice.tilt)).collect();
    let norm = (2.0 / amps.iter().map(|a| a * a).sum::<f64>()).sqrt();
    let phases: Vec<f64> = (0..HARMONICS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            amps.iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (2.0 * PI * voice.f0 * (h + 1) as f64 * t + p).sin())
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Adds white noise at `snr_db` and scales to a fixed peak.
fn finish(rng: &mut ChaCha8Rng, mut x: Vec<f64>, snr_db: f64) -> Vec<f32> {
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    for v in &mut x {
        let z: f64 = rng.sample(StandardNormal);
        *v += noise_std * z;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    x.iter().map(|v| (v * PEAK / peak) as f32).collect()
}

fn duration(rng: &mut ChaCha8Rng, lo: f64, hi: f64, sr: u32) -> usize {
    let secs = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    (secs * sr as f64).round() as usize
}

fn add_scaled(acc: &mut [f64], x: &[f64], g: f64) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += g * v;
    }
}

fn sentence(rng: &mut ChaCha8Rng, class: usize, ambiguity: f64, keywords: bool) -> String {
    let n_words = rng.random_range(4..=8);
    let n_kw = if keywords { rng.random_range(2..=4) } else { 0 };
    let mut words: Vec<&str> = Vec::with_capacity(n_words);
    for _ in 0..n_kw {
        let from = if rng.random_bool(ambiguity) {
            let other = rng.random_range(0..N_EMOTIONS - 1);
            if other >= class {
                other + 1
            } else {
                other
            }
        } else {
            class
        };
        let list = KEYWORDS[from];
        words.push(list[rng.random_range(0..list.len())]);
    }
    while words.len() < n_words {
        words.push(FILLERS[rng.random_range(0..FILLERS.len())]);
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Emotion corpus: sessions of speakers, labelled audio and transcripts.
pub fn generate_synthetic_corpus(seed: u64, spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let priors = WeightedIndex::new(spec.class_priors).map_err(|e| Error::config(e.to_string()))?;
    let sr = spec.sample_rate as f64;
    let mut entries = Vec::with_capacity(spec.n_segments());
    let mut waves = Vec::with_capacity(spec.n_segments());
    let mut ambiguous_audio = BTreeSet::new();
    let mut ambiguous_text = BTreeSet::new();
    let mut speaker_no = 0usize;
    for session in 1..=spec.n_sessions {
        for _ in 0..spec.speakers_per_session {
            speaker_no += 1;
            let speaker = format!("spk{speaker_no:02}");
            let voice = Voice::random(&mut rng, spec.speaker_band_jitter);
            for k in 0..spec.segments_per_speaker {
                let id = format!("ses{session}_{speaker}_{k:03}");
                let class = priors.sample(&mut rng);
                let (audio_ambiguous, text_ambiguous) = if rng.random_bool(spec.complementarity) {
                    let audio = rng.random_bool(0.5);
                    (audio, !audio)
                } else {
                    (false, false)
                };
                let n = duration(&mut rng, spec.min_duration_s, spec.max_duration_s, spec.sample_rate);
                let mut x = vec![0.0; n];
                let classes: Vec<usize> = if audio_ambiguous { (0..N_EMOTIONS).collect() } else { vec![class] };
                let g = 1.0 / (classes.len() as f64).sqrt();
                for &c in &classes {
                    let am = spec.class_am_hz[c] * rng.random_range(0.9..=1.1);
                    let centre = spec.class_band_hz[c] * voice.band_factor;
                    let part = carrier(&mut rng, n, sr, centre, spec.band_width, am);
                    add_scaled(&mut x, &part, g);
                }
                let t = timbre(&mut rng, n, sr, &voice);
                add_scaled(&mut x, &t, spec.timbre_level);
                let samples = finish(&mut rng, x, spec.audio_snr_db);
                let transcript = sentence(&mut rng, class, spec.text_ambiguity, !text_ambiguous);
                if audio_ambiguous {
                    ambiguous_audio.insert(id.clone());
                }
                if text_ambiguous {
                    ambiguous_text.insert(id.clone());
                }
                let label = Emotion::from_index(class)?;
                entries.push(ManifestEntry {
                    id: id.clone(),
                    wav: format!("wav/{id}.wav"),
                    transcript: Some(transcript.clone()),
                    label: Some(label),
                    session,
                    speaker: speaker.clone(),
                });
                waves.push(WaveSegment {
                    segment_id: id,
                    samples,
                    sample_rate: spec.sample_rate,
                    session,
                    speaker: speaker.clone(),
                    label: Some(label),
                    transcript: Some(transcript),
                });
            }
        }
    }
    Ok(SynthCorpus {
        manifest: DatasetManifest::new(entries)?,
        waves,
        ambiguous_audio,
        ambiguous_text,
    })
}

/// Speaker-labelled corpus for pretraining. Each speaker has its own carrier
/// band, modulation rate and harmonic timbre; there are no emotion labels.
pub fn generate_speaker_corpus(seed: u64, spec: &SpeakerCorpusSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let sr = spec.sample_rate as f64;
    let mut entries = Vec::new();
    let mut waves = Vec::new();
    let (lo, hi) = spec.band_range_hz;
    for s in 0..spec.n_speakers {
        let speaker = format!("pre{:03}", s + 1);
        let voice = Voice::random(&mut rng, 0.0);
        let centre = (lo.ln() + (hi / lo).ln() * rng.random_range(0.0..=1.0)).exp();
        let am = rng.random_range(spec.am_range_hz.0..=spec.am_range_hz.1);
        for k in 0..spec.segments_per_speaker {
            let id = format!("{speaker}_{k:03}");
            let n = duration(&mut rng, spec.min_duration_s, spec.max_duration_s, spec.sample_rate);
            let seg_am = am * rng.random_range(0.9..=1.1);
            let mut x = carrier(&mut rng, n, sr, centre, spec.band_width, seg_am);
            let t = timbre(&mut rng, n, sr, &voice);
            add_scaled(&mut x, &t, spec.timbre_level);
            let samples = finish(&mut rng, x, spec.audio_snr_db);
            entries.push(ManifestEntry {
                id: id.clone(),
                wav: format!("wav/{id}.wav"),
                transcript: None,
                label: None,
                session: 1,
                speaker: speaker.clone(),
            });
            waves.push(WaveSegment {
                segment_id: id,
                samples,
                sample_rate: spec.sample_rate,
                session: 1,
                speaker: speaker.clone(),
                label: None,
                transcript: None,
            });
        }
    }
    Ok(SynthCorpus {
        manifest: DatasetManifest::new(entries)?,
        waves,
        ambiguous_audio: BTreeSet::new(),
        ambiguous_text: BTreeSet::new(),
    })
}
