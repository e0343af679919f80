use emofuse_core::augment::AugmentPolicy;
use emofuse_core::eval::{generate_synthetic_corpus, SynthSpec};
use emofuse_core::frontend::{normalize_segment, FrontEnd, FrontendConfig, LogMelSpectrogram};
use emofuse_core::speech::{score_segment, train_ser, ResNetConfig, SpeechHyper, SpeechModel, TransferMode};

fn corpus() -> (Vec<LogMelSpectrogram>, Vec<usize>) {
    let spec = SynthSpec {
        n_sessions: 2,
        speakers_per_session: 2,
        segments_per_speaker: 4,
        min_duration_s: 1.6,
        max_duration_s: 2.0,
        ..SynthSpec::default()
    };
    let c = generate_synthetic_corpus(21, &spec).unwrap();
    let fe = FrontEnd::new(&FrontendConfig::default()).unwrap();
    let labels = c.manifest.labels();
    let specs: Vec<_> = c.waves.iter().map(|w| normalize_segment(&fe.log_mel(w).unwrap()).unwrap()).collect();
    let y = specs.iter().map(|s| labels[&s.segment_id]).collect();
    (specs, y)
}

fn config() -> ResNetConfig {
    ResNetConfig {
        first_block_channels: 4,
        embedding_dim: 16,
        ..ResNetConfig::desk(4)
    }
}

fn hyper() -> SpeechHyper {
    SpeechHyper {
        epochs: 2,
        batch_size: 8,
        augment: AugmentPolicy::conservative(),
        copies: 1,
        seed: 3,
        ..SpeechHyper::default()
    }
}

fn train(mode: TransferMode) -> SpeechModel {
    let (specs, y) = corpus();
    let data: Vec<_> = specs.iter().zip(y).collect();
    let mut model = SpeechModel::new(&config(), 1).unwrap();
    train_ser(&mut model, &data, mode, &hyper()).unwrap();
    model
}

#[test]
fn linear_probe_freezes_backbone() {
    let before = SpeechModel::new(&config(), 1).unwrap().backbone_checksum();
    let after = train(TransferMode::linear_probe(0.1));
    assert_eq!(after.backbone_checksum(), before);
}

#[test]
fn fine_tune_without_backbone_lr_equals_probe() {
    let probe = train(TransferMode::linear_probe(0.1));
    let tuned = train(TransferMode::fine_tune(0.1, 0.0));
    assert_eq!(probe.params().checksum(|_| true), tuned.params().checksum(|_| true));
    let (specs, _) = corpus();
    for s in &specs {
        assert_eq!(score_segment(&probe, s).unwrap(), score_segment(&tuned, s).unwrap());
    }
}

#[test]
fn fine_tune_moves_backbone() {
    let before = SpeechModel::new(&config(), 1).unwrap().backbone_checksum();
    assert_ne!(train(TransferMode::fine_tune(0.1, 1e-2)).backbone_checksum(), before);
}

#[test]
fn training_is_deterministic() {
    let a = train(TransferMode::scratch(0.05));
    let b = train(TransferMode::scratch(0.05));
    assert_eq!(a.params().checksum(|_| true), b.params().checksum(|_| true));
    assert_eq!(a.backbone_checksum(), b.backbone_checksum());
}

#[test]
fn scores_cover_full_segment() {
    let model = SpeechModel::new(&config(), 2).unwrap();
    let (specs, _) = corpus();
    let s = &specs[0];
    let full = score_segment(&model, s).unwrap();
    assert!((full.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    let mut raw = s.clone();
    raw.normalized = false;
    assert!(score_segment(&model, &raw).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let model = train(TransferMode::scratch(0.05));
    let back = SpeechModel::from_checkpoint(&model.to_checkpoint(2)).unwrap();
    let (specs, _) = corpus();
    assert_eq!(score_segment(&back, &specs[1]).unwrap(), score_segment(&model, &specs[1]).unwrap());
}
