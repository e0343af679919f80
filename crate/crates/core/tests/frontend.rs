use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use emofuse_core::frontend::wav::{read_wav, write_wav};
use emofuse_core::frontend::{
    cache, chunk_of_len, frame_count, log_mel, mel_scale, mel_to_hz, normalize_segment, random_chunk, ChunkPadding,
    FrontEnd, FrontendConfig, LogMelSpectrogram, MelFilterbank, WaveSegment,
};

fn tone(hz: f64, secs: f64) -> WaveSegment {
    let n = (16_000.0 * secs) as usize;
    let samples = (0..n).map(|i| (0.5 * (2.0 * PI * hz * i as f64 / 16_000.0).sin()) as f32).collect();
    WaveSegment::new("tone", samples, 16_000).unwrap()
}

fn noise(seed: u64, secs: f64) -> WaveSegment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, 0.1).unwrap();
    let n = (16_000.0 * secs) as usize;
    WaveSegment::new("noise", (0..n).map(|_| d.sample(&mut rng) as f32).collect(), 16_000).unwrap()
}

fn loop_count(n: usize, frame: usize, hop: usize) -> usize {
    let mut count = 0;
    let mut start = 0;
    while start + frame <= n {
        count += 1;
        start += hop;
    }
    count
}

proptest! {
    #[test]
    fn frame_count_matches_loop(n in 0usize..20_000, frame in 1usize..800, hop in 1usize..400) {
        match frame_count(n, frame, hop) {
            Ok(c) => prop_assert_eq!(c, loop_count(n, frame, hop)),
            Err(_) => prop_assert!(n < frame),
        }
    }

    #[test]
    fn mel_round_trip(hz in 0.0f64..20_000.0) {
        prop_assert!((mel_to_hz(mel_scale(hz).unwrap()) - hz).abs() < 1e-6);
    }

    #[test]
    fn chunks_have_requested_length(frames in 1usize..400, len in 1usize..350, seed in any::<u64>(), zero in any::<bool>()) {
        let data: Vec<f64> = (0..frames * 4).map(|i| i as f64).collect();
        let spec = LogMelSpectrogram::new("s", frames, 4, data).unwrap();
        let padding = if zero { ChunkPadding::Zero } else { ChunkPadding::Repeat };
        let (chunk, info) = chunk_of_len(&spec, len, padding, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(chunk.n_frames, len);
        prop_assert_eq!(chunk.data.len(), len * 4);
        for t in 0..len {
            let expected: Vec<f64> = if frames >= len {
                spec.frame(info.offset + t).to_vec()
            } else if padding == ChunkPadding::Repeat {
                spec.frame(t % frames).to_vec()
            } else if t < frames {
                spec.frame(t).to_vec()
            } else {
                vec![0.0; 4]
            };
            prop_assert_eq!(chunk.frame(t), &expected[..]);
        }
        if frames >= len {
            prop_assert!(info.offset + len <= frames);
        }
    }
}

#[test]
fn filterbank_rows_non_negative_and_cover_interior() {
    for config in [
        FrontendConfig::default(),
        FrontendConfig {
            n_mels: 40,
            f_min: 100.0,
            f_max: Some(6000.0),
            ..FrontendConfig::default()
        },
    ] {
        let fb = MelFilterbank::new(&config).unwrap();
        let bin_hz = |k: usize| k as f64 * config.sample_rate as f64 / config.fft_size as f64;
        for m in 0..fb.n_mels() {
            assert!(fb.row(m).iter().all(|&w| w >= 0.0));
        }
        for k in 0..fb.n_bins() {
            let f = bin_hz(k);
            if f > config.f_min && f < config.f_max() {
                let total: f64 = (0..fb.n_mels()).map(|m| fb.row(m)[k]).sum();
                assert!(total > 0.0, "bin {k} at {f} Hz has no filter weight");
            }
        }
    }
}

#[test]
fn one_khz_tone_peaks_at_nearest_centre() {
    let config = FrontendConfig::default();
    let spec = log_mel(&tone(1000.0, 1.0), &config).unwrap();
    let mean: Vec<f64> = (0..spec.n_mels)
        .map(|m| (0..spec.n_frames).map(|t| spec.get(t, m)).sum::<f64>() / spec.n_frames as f64)
        .collect();
    let peak = (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
    // Centres recomputed from the mel formula, independent of the filterbank.
    let (lo, hi) = (mel_scale(config.f_min).unwrap(), mel_scale(config.f_max()).unwrap());
    let centres: Vec<f64> = (1..=config.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let nearest = (0..centres.len())
        .min_by(|&a, &b| (centres[a] - 1000.0).abs().total_cmp(&(centres[b] - 1000.0).abs()))
        .unwrap();
    assert_eq!(peak, nearest, "peak centre {} Hz", centres[peak]);
}

#[test]
fn white_noise_shape() {
    let spec = log_mel(&noise(1, 1.0), &FrontendConfig::default()).unwrap();
    assert_eq!((spec.n_frames, spec.n_mels), (98, 128));
    assert!(spec.data.iter().all(|v| v.is_finite()));
}

#[test]
fn silence_hits_log_floor() {
    let wave = WaveSegment::new("z", vec![0.0; 16_000], 16_000).unwrap();
    let config = FrontendConfig::default();
    let spec = log_mel(&wave, &config).unwrap();
    assert!(spec.data.iter().all(|&v| v == config.log_floor.ln()));
}

#[test]
fn too_short_and_wrong_rate_rejected() {
    let fe = FrontEnd::new(&FrontendConfig::default()).unwrap();
    let short = WaveSegment::new("s", vec![0.1; 399], 16_000).unwrap();
    assert!(fe.log_mel(&short).is_err());
    let other = WaveSegment::new("r", vec![0.1; 8000], 8000).unwrap();
    assert!(fe.log_mel(&other).is_err());
}

#[test]
fn normalization_statistics_and_idempotence() {
    let spec = log_mel(&noise(2, 1.5), &FrontendConfig::default()).unwrap();
    let norm = normalize_segment(&spec).unwrap();
    let t = norm.n_frames as f64;
    for m in 0..norm.n_mels {
        let mean = (0..norm.n_frames).map(|i| norm.get(i, m)).sum::<f64>() / t;
        let var = (0..norm.n_frames).map(|i| (norm.get(i, m) - mean).powi(2)).sum::<f64>() / t;
        if (0..norm.n_frames).all(|i| spec.get(i, m) == spec.get(0, m)) {
            assert!((0..norm.n_frames).all(|i| norm.get(i, m) == 0.0));
            continue;
        }
        assert!(mean.abs() < 1e-9, "bin {m}: mean {mean}");
        assert!((var - 1.0).abs() < 1e-6);
    }
    assert!(normalize_segment(&norm).is_err());
    let mut reset = norm.clone();
    reset.normalized = false;
    let again = normalize_segment(&reset).unwrap();
    let diff = again.data.iter().zip(&norm.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6);
}

#[test]
fn random_chunk_draws_from_set() {
    let spec = LogMelSpectrogram::new("s", 500, 2, vec![0.0; 1000]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..200 {
        let (c, info) = random_chunk(&spec, &[150, 200, 250, 300], ChunkPadding::Repeat, &mut rng).unwrap();
        assert_eq!(c.n_frames, info.len);
        seen.insert(info.len);
    }
    assert_eq!(seen.len(), 4);
    assert!(random_chunk(&spec, &[], ChunkPadding::Repeat, &mut rng).is_err());
}

#[test]
fn wav_and_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let wave = noise(3, 0.25);
    let p = dir.path().join("a.wav");
    write_wav(&p, &wave.samples, 16_000).unwrap();
    let (samples, rate) = read_wav(&p).unwrap();
    assert_eq!((samples, rate), (wave.samples.clone(), 16_000));

    let spec = normalize_segment(&log_mel(&wave, &FrontendConfig::default()).unwrap()).unwrap();
    let c = dir.path().join("f.fbank");
    cache::save(&c, &[spec.clone(), spec.clone()]).unwrap();
    assert_eq!(cache::load(&c).unwrap(), vec![spec.clone(), spec]);
    let mut bytes = std::fs::read(&c).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(cache::decode(&bytes).is_err());
}
