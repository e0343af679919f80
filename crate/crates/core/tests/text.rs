use proptest::prelude::*;

use emofuse_core::nn::{Graph, Tensor};
use emofuse_core::text::{build_vocab, finetune_text, score_text, tokenize, TextHyper, TextModel, TransformerConfig};

const CORPUS: [(&str, usize); 8] = [
    ("this is so unfair i am furious", 0),
    ("stop shouting at me", 0),
    ("what a wonderful day", 1),
    ("we won the prize amazing", 1),
    ("the meeting is on tuesday", 2),
    ("send the report please", 2),
    ("i miss her so much", 3),
    ("everything feels hopeless and lost", 3),
];

fn small_config() -> TransformerConfig {
    TransformerConfig {
        n_layers: 1,
        n_heads: 2,
        hidden_dim: 16,
        max_len: 24,
        n_classes: 4,
        ffn_mult: 2,
    }
}

fn setup() -> (TextModel, emofuse_core::text::Vocabulary) {
    let texts: Vec<&str> = CORPUS.iter().map(|c| c.0).collect();
    let vocab = build_vocab(&texts, 1).unwrap();
    let model = TextModel::new(&small_config(), vocab.len(), 4).unwrap();
    (model, vocab)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn padding_content_never_leaks(idx in 0usize..8, junk in prop::collection::vec(0usize..20, 24)) {
        let (model, vocab) = setup();
        let seq = tokenize(CORPUS[idx].0, &vocab, small_config().max_len).unwrap();
        let clean = model.encode_classify(&seq).unwrap();
        let mut dirty = seq.clone();
        for (i, j) in junk.iter().enumerate() {
            if dirty.attention_mask[i] == 0 {
                dirty.ids[i] = j % vocab.len();
            }
        }
        prop_assert_eq!(model.encode_classify(&dirty).unwrap(), clean);
    }

    #[test]
    fn batch_padding_does_not_change_logits(a in 0usize..8, b in 0usize..8) {
        let (model, vocab) = setup();
        let max_len = small_config().max_len;
        let sa = tokenize(CORPUS[a].0, &vocab, max_len).unwrap();
        let sb = tokenize(CORPUS[b].0, &vocab, max_len).unwrap();
        let mut g = Graph::new();
        let out = model.forward(&mut g, &[&sa, &sb], false).unwrap();
        let both = g.value(out).data().to_vec();
        let alone_a = model.encode_classify(&sa).unwrap();
        let alone_b = model.encode_classify(&sb).unwrap();
        for (x, y) in both.iter().zip(alone_a.iter().chain(&alone_b)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn truncation_keeps_sep_at_every_length() {
    let (_, vocab) = setup();
    let text = CORPUS[7].0;
    for max_len in 2..20 {
        let seq = tokenize(text, &vocab, max_len).unwrap();
        assert_eq!(seq.ids.len(), max_len);
        let real = seq.real_len();
        assert!(real >= 2 && seq.attention_mask[..real].iter().all(|&m| m == 1));
        assert!(seq.attention_mask[real..].iter().all(|&m| m == 0));
        assert_eq!(seq.ids[0], vocab.id("[CLS]").unwrap());
        assert_eq!(seq.ids[real - 1], vocab.id("[SEP]").unwrap());
    }
    assert!(tokenize(text, &vocab, 1).is_err());
}

#[test]
fn masked_keys_get_exactly_zero_weight() {
    let mut g = Graph::new();
    let scores = g.input(Tensor::new(vec![2, 3, 4], (0..24).map(|i| (i as f64 * 0.37).sin() * 50.0).collect()).unwrap());
    let mask = [true, false, true, false, true, true, true, false];
    let w = g.masked_softmax(scores, &mask).unwrap();
    let v = g.value(w).data();
    for b in 0..2 {
        for i in 0..3 {
            let row = &v[(b * 3 + i) * 4..(b * 3 + i + 1) * 4];
            for (k, &x) in row.iter().enumerate() {
                if !mask[b * 4 + k] {
                    assert_eq!(x, 0.0);
                }
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn full_batch_loss_decreases() {
    let (mut model, vocab) = setup();
    let data: Vec<(Option<&str>, usize)> = CORPUS.iter().map(|&(t, l)| (Some(t), l)).collect();
    let hyper = TextHyper {
        epochs: 20,
        batch_size: 8,
        lr: 1e-4,
        ..TextHyper::default()
    };
    let history = finetune_text(&mut model, &vocab, &data, &hyper).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.loss).collect();
    assert_eq!(losses.len(), 20);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss went up: {losses:?}");
    }
    assert!(losses[19] < losses[0]);
}

#[test]
fn scores_are_log_posteriors() {
    let (model, vocab) = setup();
    for (t, _) in CORPUS {
        let s = score_text(&model, t, &vocab).unwrap();
        assert_eq!(s.len(), 4);
        assert!((s.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(finetune_text(&mut setup().0, &vocab, &[(None, 0)], &TextHyper::default()).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let (model, vocab) = setup();
    let ck = model.to_checkpoint(&vocab, 3);
    let (back, v2) = TextModel::from_checkpoint(&ck).unwrap();
    assert_eq!(v2, vocab);
    let seq = tokenize(CORPUS[0].0, &vocab, small_config().max_len).unwrap();
    assert_eq!(back.encode_classify(&seq).unwrap(), model.encode_classify(&seq).unwrap());
}
