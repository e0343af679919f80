//! Waveform to log-mel spectrogram front-end, per-segment normalization and
//! training chunk selection.

pub mod cache;
pub mod wav;

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Emotion;
use crate::probe;

/// Floor on the per-bin standard deviation during segment normalization.
pub const NORM_STD_FLOOR: f64 = 1e-8;

/// One pre-segmented utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveSegment {
    pub segment_id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub session: u32,
    pub speaker: String,
    pub label: Option<Emotion>,
    pub transcript: Option<String>,
}

impl WaveSegment {
    pub fn new(segment_id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let seg = WaveSegment {
            segment_id: segment_id.into(),
            samples,
            sample_rate,
            session: 1,
            speaker: String::new(),
            label: None,
            transcript: None,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::input(format!("segment {} has no samples", self.segment_id)));
        }
        if self.sample_rate == 0 {
            return Err(Error::input("sample rate must be positive"));
        }
        if let Some(v) = self.samples.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::input(format!(
                "segment {} has amplitude {v} outside [-1, 1]",
                self.segment_id
            )));
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hamming,
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
                match self {
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub window: Window,
    pub f_min: f64,
    /// Upper filter edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            frame_length_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 128,
            fft_size: 512,
            window: Window::Hamming,
            f_min: 20.0,
            f_max: None,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn frame_length(&self) -> usize {
        (self.frame_length_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_length(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn frame_rate(&self) -> f64 {
        1000.0 / self.hop_ms
    }

    pub fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 || self.frame_length() == 0 || self.hop_length() == 0 {
            return Err(Error::config("sample rate, frame length and hop must be positive"));
        }
        if self.fft_size < self.frame_length() {
            return Err(Error::config(format!(
                "fft_size {} shorter than frame length {}",
                self.fft_size,
                self.frame_length()
            )));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max() && self.f_max() <= nyquist) {
            return Err(Error::config(format!(
                "need 0 <= f_min ({}) < f_max ({}) <= {nyquist}",
                self.f_min,
                self.f_max()
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be >= 1"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }
}

/// Frames × mel-bins matrix of log energies (row-major, one row per frame).
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    pub segment_id: String,
    pub n_frames: usize,
    pub n_mels: usize,
    pub data: Vec<f64>,
    pub frame_rate: f64,
    pub normalized: bool,
}

impl LogMelSpectrogram {
    pub fn new(segment_id: impl Into<String>, n_frames: usize, n_mels: usize, data: Vec<f64>) -> Result<Self> {
        if n_frames == 0 || n_mels == 0 || data.len() != n_frames * n_mels {
            return Err(Error::shape(
                "spectrogram",
                format!("{n_frames} x {n_mels} with {} values", data.len()),
            ));
        }
        Ok(LogMelSpectrogram {
            segment_id: segment_id.into(),
            n_frames,
            n_mels,
            data,
            frame_rate: 100.0,
            normalized: false,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.data[t * self.n_mels + m]
    }
}

/// HTK mel scale.
pub fn mel_scale(hz: f64) -> Result<f64> {
    if hz < 0.0 || hz.is_nan() {
        return Err(Error::NegativeFrequency(hz));
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of whole frames of length `frame` at hop `hop` in `n` samples.
pub fn frame_count(n: usize, frame: usize, hop: usize) -> Result<usize> {
    if n < frame {
        return Err(Error::SegmentTooShort {
            samples: n,
            frame_length: frame,
        });
    }
    Ok((n - frame) / hop + 1)
}

/// Splits a waveform into windowed frames (row-major, `frame_length` columns).
pub fn frame_signal(wave: &WaveSegment, config: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    let frame = config.frame_length();
    let hop = config.hop_length();
    let n = frame_count(wave.samples.len(), frame, hop)?;
    let window = config.window.coefficients(frame);
    Ok((0..n)
        .map(|i| {
            wave.samples[i * hop..i * hop + frame]
                .iter()
                .zip(&window)
                .map(|(&s, w)| s as f64 * w)
                .collect()
        })
        .collect())
}

/// Triangular filters with peaks equally spaced on the mel scale between
/// `f_min` and `f_max`, evaluated at FFT bin centre frequencies.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(config: &FrontendConfig) -> Result<Self> {
        config.validate()?;
        let n_bins = config.fft_size / 2 + 1;
        let lo = mel_scale(config.f_min)?;
        let hi = mel_scale(config.f_max())?;
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.fft_size as f64;
        let mut weights = vec![0.0; config.n_mels * n_bins];
        for m in 0..config.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
        }
        Ok(MelFilterbank {
            n_mels: config.n_mels,
            n_bins,
            weights,
            centers_hz: edges[1..=config.n_mels].to_vec(),
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Peak frequency of each filter.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

/// Reusable front-end: window, FFT plan and filterbank for one configuration.
pub struct FrontEnd {
    config: FrontendConfig,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl FrontEnd {
    pub fn new(config: &FrontendConfig) -> Result<Self> {
        let filterbank = MelFilterbank::new(config)?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(FrontEnd {
            config: config.clone(),
            filterbank,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn log_mel(&self, wave: &WaveSegment) -> Result<LogMelSpectrogram> {
        wave.validate()?;
        if wave.sample_rate != self.config.sample_rate {
            return Err(Error::SampleRate {
                got: wave.sample_rate,
                expected: self.config.sample_rate,
            });
        }
        let frames = frame_signal(wave, &self.config)?;
        let n_mels = self.config.n_mels;
        let n_fft = self.config.fft_size;
        let floor = self.config.log_floor;
        let mut data = vec![0.0; frames.len() * n_mels];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; self.filterbank.n_bins];
        for (t, frame) in frames.iter().enumerate() {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(frame.get(i).copied().unwrap_or(0.0), 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            let row = &mut data[t * n_mels..(t + 1) * n_mels];
            self.filterbank.apply(&power, row);
            for v in row.iter_mut() {
                *v = v.max(floor).ln();
            }
        }
        let mut spec = LogMelSpectrogram::new(wave.segment_id.clone(), frames.len(), n_mels, data)?;
        spec.frame_rate = self.config.frame_rate();
        Ok(spec)
    }
}

/// Log-mel spectrogram of one segment.
pub fn log_mel(wave: &WaveSegment, config: &FrontendConfig) -> Result<LogMelSpectrogram> {
    FrontEnd::new(config)?.log_mel(wave)
}

/// Per-bin mean and variance normalization over the segment's own frames.
pub fn normalize_segment(spec: &LogMelSpectrogram) -> Result<LogMelSpectrogram> {
    if spec.normalized {
        return Err(Error::input(format!(
            "spectrogram {} is already normalized",
            spec.segment_id
        )));
    }
    let (t, m) = (spec.n_frames, spec.n_mels);
    let mut out = spec.clone();
    for bin in 0..m {
        let mean = (0..t).map(|i| spec.get(i, bin)).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (spec.get(i, bin) - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        for i in 0..t {
            // Constant bins go to exactly zero rather than rounding noise over the floor.
            out.data[i * m + bin] = if std < NORM_STD_FLOOR { 0.0 } else { (spec.get(i, bin) - mean) / std };
        }
    }
    out.normalized = true;
    Ok(out)
}

/// How chunks longer than the segment are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkPadding {
    /// Repeat the segment's own frames cyclically.
    #[default]
    Repeat,
    Zero,
}

/// Length and start frame chosen by [`random_chunk`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkInfo {
    pub len: usize,
    pub offset: usize,
}

/// Fixed-length view starting at `offset`, padded when the segment is shorter.
pub fn chunk_at(spec: &LogMelSpectrogram, len: usize, offset: usize, padding: ChunkPadding) -> LogMelSpectrogram {
    let m = spec.n_mels;
    let mut data = Vec::with_capacity(len * m);
    if spec.n_frames >= len {
        data.extend_from_slice(&spec.data[offset * m..(offset + len) * m]);
    } else {
        for i in 0..len {
            match padding {
                ChunkPadding::Repeat => data.extend_from_slice(spec.frame(i % spec.n_frames)),
                ChunkPadding::Zero if i < spec.n_frames => data.extend_from_slice(spec.frame(i)),
                ChunkPadding::Zero => data.extend(std::iter::repeat_n(0.0, m)),
            }
        }
    }
    LogMelSpectrogram {
        segment_id: spec.segment_id.clone(),
        n_frames: len,
        n_mels: m,
        data,
        frame_rate: spec.frame_rate,
        normalized: spec.normalized,
    }
}

/// Picks a random start for a chunk of exactly `len` frames.
pub fn chunk_of_len<R: Rng + ?Sized>(
    spec: &LogMelSpectrogram,
    len: usize,
    padding: ChunkPadding,
    rng: &mut R,
) -> (LogMelSpectrogram, ChunkInfo) {
    probe::record_chunk();
    let offset = if spec.n_frames >= len {
        rng.random_range(0..=spec.n_frames - len)
    } else {
        0
    };
    (chunk_at(spec, len, offset, padding), ChunkInfo { len, offset })
}

/// Draws a chunk length uniformly from `chunk_set`, then a uniform offset.
pub fn random_chunk<R: Rng + ?Sized>(
    spec: &LogMelSpectrogram,
    chunk_set: &[usize],
    padding: ChunkPadding,
    rng: &mut R,
) -> Result<(LogMelSpectrogram, ChunkInfo)> {
    if chunk_set.is_empty() || chunk_set.contains(&0) {
        return Err(Error::config("chunk set must be non-empty and positive"));
    }
    let len = chunk_set[rng.random_range(0..chunk_set.len())];
    Ok(chunk_of_len(spec, len, padding, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f32>) -> WaveSegment {
        WaveSegment::new("w", samples, 16_000).unwrap()
    }

    fn spec_from(rows: &[&[f64]]) -> LogMelSpectrogram {
        let m = rows[0].len();
        LogMelSpectrogram::new("s", rows.len(), m, rows.concat()).unwrap()
    }

    #[test]
    fn framing_counts() {
        let cfg = FrontendConfig::default();
        assert_eq!(cfg.frame_length(), 400);
        assert_eq!(cfg.hop_length(), 160);
        assert_eq!(frame_signal(&wave(vec![0.0; 16_000]), &cfg).unwrap().len(), 98);
        assert_eq!(frame_signal(&wave(vec![0.0; 400]), &cfg).unwrap().len(), 1);
        let err = frame_signal(&wave(vec![0.0; 399]), &cfg).unwrap_err();
        assert!(err.to_string().contains("segment too short"), "{err}");
    }

    #[test]
    fn frames_are_windowed() {
        let cfg = FrontendConfig::default();
        let frames = frame_signal(&wave(vec![1.0; 400]), &cfg).unwrap();
        let w = Window::Hamming.coefficients(400);
        assert_eq!(frames[0], w);
        assert!((w[0] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn mel_values() {
        assert_eq!(mel_scale(0.0).unwrap(), 0.0);
        assert!((mel_scale(700.0).unwrap() - 2595.0 * 2f64.log10()).abs() < 1e-9);
        assert!((mel_scale(700.0).unwrap() - 781.17).abs() < 0.01);
        assert!((mel_scale(1000.0).unwrap() - 999.99).abs() < 0.01);
        assert!(matches!(mel_scale(-1.0), Err(Error::NegativeFrequency(_))));
        assert!((mel_to_hz(mel_scale(1234.5).unwrap()) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FrontendConfig::default();
        let spec = log_mel(&wave(vec![0.0; 8000]), &cfg).unwrap();
        let want = cfg.log_floor.ln();
        assert!(spec.data.iter().all(|&v| v == want));
    }

    #[test]
    fn rejects_other_sample_rates() {
        let cfg = FrontendConfig::default();
        let w = WaveSegment::new("w", vec![0.0; 8000], 8000).unwrap();
        assert!(matches!(log_mel(&w, &cfg), Err(Error::SampleRate { got: 8000, .. })));
    }

    #[test]
    fn invalid_waves_rejected() {
        assert!(WaveSegment::new("w", vec![], 16_000).is_err());
        assert!(WaveSegment::new("w", vec![1.5], 16_000).is_err());
        assert!(WaveSegment::new("w", vec![0.1], 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FrontendConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.fft_size = 256;
        assert!(cfg.validate().is_err());
        let cfg = FrontendConfig {
            f_min: 9000.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn normalize_examples() {
        let spec = spec_from(&[&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]]);
        let n = normalize_segment(&spec).unwrap();
        let want = [-1.224_744_871, 0.0, 1.224_744_871];
        for (i, w) in want.iter().enumerate() {
            assert!((n.get(i, 0) - w).abs() < 1e-8);
            assert_eq!(n.get(i, 1), 0.0);
        }
        assert!(n.normalized);
        assert!(normalize_segment(&n).is_err());
    }

    #[test]
    fn chunk_longer_segment() {
        let data: Vec<f64> = (0..500 * 2).map(|i| i as f64).collect();
        let spec = LogMelSpectrogram::new("s", 500, 2, data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (c, info) = chunk_of_len(&spec, 300, ChunkPadding::Repeat, &mut rng);
            assert_eq!(c.n_frames, 300);
            assert!(info.offset <= 200);
            assert_eq!(c.frame(0), spec.frame(info.offset));
        }
    }

    #[test]
    fn chunk_short_segment_repeats() {
        let data: Vec<f64> = (0..100 * 3).map(|i| i as f64).collect();
        let spec = LogMelSpectrogram::new("s", 100, 3, data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, info) = chunk_of_len(&spec, 150, ChunkPadding::Repeat, &mut rng);
        assert_eq!(info, ChunkInfo { len: 150, offset: 0 });
        for i in 0..150 {
            assert_eq!(c.frame(i), spec.frame(i % 100));
        }
        let (z, _) = chunk_of_len(&spec, 150, ChunkPadding::Zero, &mut rng);
        assert_eq!(z.frame(99), spec.frame(99));
        assert!(z.frame(100).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chunk_is_seed_deterministic() {
        let spec = LogMelSpectrogram::new("s", 400, 1, vec![0.0; 400]).unwrap();
        let set = [150, 200, 250, 300];
        let a = random_chunk(&spec, &set, ChunkPadding::Repeat, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_chunk(&spec, &set, ChunkPadding::Repeat, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.1, b.1);
        assert!(random_chunk(&spec, &[], ChunkPadding::Repeat, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }
}
