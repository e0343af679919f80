use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use emofuse_core::augment::{apply_masks_with_plan, augment_batch, AugmentPolicy};
use emofuse_core::frontend::LogMelSpectrogram;

fn ramp(frames: usize, mels: usize) -> LogMelSpectrogram {
    let data = (0..frames * mels).map(|i| 1.0 + i as f64).collect();
    LogMelSpectrogram::new("r", frames, mels, data).unwrap()
}

#[test]
fn masks_stay_within_policy_bounds() {
    for policy in [AugmentPolicy::conservative(), AugmentPolicy::aggressive()] {
        for seed in 0..1000u64 {
            let frames = 150 + (seed as usize * 37) % 300;
            let spec = ramp(frames, 128);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, plan) = apply_masks_with_plan(&spec, &policy, &mut rng).unwrap();
            assert!(plan.freq.len() <= policy.n_freq_masks);
            assert!(plan.time.len() <= policy.n_time_masks);
            let max_t = (policy.max_time_frac * frames as f64).round() as usize;
            for s in &plan.freq {
                assert!(s.width <= policy.max_freq_width && s.start + s.width <= 128);
            }
            for s in &plan.time {
                assert!(s.width <= max_t && s.start + s.width <= frames);
            }
            // Every changed cell lies in a stripe and holds the mask value.
            for t in 0..frames {
                for m in 0..128 {
                    let in_stripe = plan.freq.iter().any(|s| m >= s.start && m < s.start + s.width)
                        || plan.time.iter().any(|s| t >= s.start && t < s.start + s.width);
                    let v = out.get(t, m);
                    if in_stripe {
                        assert_eq!(v, policy.mask_value);
                    } else {
                        assert_eq!(v, spec.get(t, m));
                    }
                }
            }
        }
    }
}

#[test]
fn none_policy_is_identity() {
    let spec = ramp(200, 128);
    let (out, plan) = apply_masks_with_plan(&spec, &AugmentPolicy::none(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out, spec);
    assert!(plan.freq.is_empty() && plan.time.is_empty());
}

#[test]
fn batch_keeps_originals_first() {
    let specs = vec![ramp(160, 128), ramp(170, 128)];
    let out = augment_batch(&specs, &AugmentPolicy::aggressive(), 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(out.len(), 8);
    assert_eq!(out[0], specs[0]);
    assert_eq!(out[4], specs[1]);
}

#[test]
fn oversized_policy_rejected() {
    let spec = ramp(150, 8);
    assert!(apply_masks_with_plan(&spec, &AugmentPolicy::conservative(), &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    assert!(apply_masks_with_plan(&spec, &AugmentPolicy::aggressive(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
