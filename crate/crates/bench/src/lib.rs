//! Shared fixtures for the criterion benches in `benches/`.

use std::f64::consts::PI;

use emofuse_core::frontend::{normalize_segment, FrontEnd, FrontendConfig, LogMelSpectrogram, WaveSegment};
use emofuse_core::fusion::{Modality, ScoreSet};

/// A chirp with a little harmonic content, `secs` long at 16 kHz.
pub fn chirp(secs: f64) -> WaveSegment {
    let n = (16_000.0 * secs) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let f = 200.0 + 1500.0 * t / secs;
            (0.4 * (2.0 * PI * f * t).sin() + 0.1 * (6.0 * PI * f * t).sin()) as f32
        })
        .collect();
    WaveSegment::new("chirp", samples, 16_000).expect("valid segment")
}

pub fn normalized_features(secs: f64) -> LogMelSpectrogram {
    let fe = FrontEnd::new(&FrontendConfig::default()).expect("default config");
    normalize_segment(&fe.log_mel(&chirp(secs)).expect("long enough")).expect("not yet normalized")
}

/// Deterministic log-posterior-like scores for `n` segments.
pub fn score_set(modality: Modality, n: usize, shift: f64) -> ScoreSet {
    let mut s = ScoreSet::new(modality, 4);
    for i in 0..n {
        let row = (0..4).map(|k| -((i * 7 + k * 3) as f64 * 0.13 + shift).sin().abs() * 4.0).collect();
        s.insert(format!("seg{i:05}"), row).expect("finite row");
    }
    s
}
