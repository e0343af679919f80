use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, TextModel, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::graph::log_softmax_in_place;
use crate::nn::{argmax, EpochRecord, Graph, History, OptimizerKind, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextHyper {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    /// Stop once an epoch's training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for TextHyper {
    fn default() -> Self {
        TextHyper {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            target_accuracy: None,
            seed: 0,
        }
    }
}

/// Fine-tunes every parameter with Adam and cross-entropy. `data` pairs
/// transcripts with class labels; `None` transcripts are rejected.
pub fn finetune_text(
    model: &mut TextModel,
    vocab: &Vocabulary,
    data: &[(Option<&str>, usize)],
    hyper: &TextHyper,
) -> Result<History> {
    if data.is_empty() {
        return Err(Error::input("text training needs at least one transcript"));
    }
    if hyper.epochs == 0 || hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(Error::config("need epochs >= 1, batch_size >= 1 and lr > 0"));
    }
    if vocab.len() != model.vocab_size() {
        return Err(Error::input(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let k = model.config().n_classes;
    let mut examples: Vec<(TokenSequence, usize)> = Vec::with_capacity(data.len());
    for (i, (text, label)) in data.iter().enumerate() {
        let text = text.ok_or_else(|| Error::input(format!("training example {i} has no transcript")))?;
        if *label >= k {
            return Err(Error::LabelOutOfRange { label: *label, n_classes: k });
        }
        examples.push((tokenize(text, vocab, model.config().max_len)?, *label));
    }
    let mut opt = OptimizerState::new(OptimizerKind::Adam, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = History::default();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            let seqs: Vec<&TokenSequence> = batch.iter().map(|&i| &examples[i].0).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| examples[i].1).collect();
            let mut g = Graph::new();
            let logits = model.forward(&mut g, &seqs, true)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::input(format!("non-finite training loss at epoch {epoch}")));
            }
            loss_sum += lv * batch.len() as f64;
            for (row, &l) in g.value(logits).data().chunks(k).zip(&labels) {
                if argmax(row) == l {
                    correct += 1;
                }
            }
            let grads = g.backward(loss)?;
            let pg = g.param_grads(&grads);
            opt.apply(model.params_mut(), &pg, |_| hyper.lr)?;
        }
        let n = examples.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            lr: hyper.lr,
        };
        log::info!("epoch {epoch}: loss {:.4} accuracy {:.4}", record.loss, record.accuracy);
        let done = hyper.target_accuracy.is_some_and(|t| record.accuracy >= t);
        history.epochs.push(record);
        if done {
            break;
        }
    }
    Ok(history)
}

/// Per-class log-posteriors for one transcript.
pub fn score_text(model: &TextModel, transcript: &str, vocab: &Vocabulary) -> Result<Vec<f64>> {
    let seq = tokenize(transcript, vocab, model.config().max_len)?;
    let mut logits = model.encode_classify(&seq)?;
    log_softmax_in_place(&mut logits);
    Ok(logits)
}
