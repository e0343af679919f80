use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForwardMode, ResNetConfig, SpeechModel};
use crate::augment::{apply_masks, AugmentPolicy};
use crate::error::{Error, Result};
use crate::frontend::{chunk_of_len, ChunkPadding, LogMelSpectrogram};
use crate::nn::graph::log_softmax_in_place;
use crate::nn::{argmax, EpochRecord, Graph, History, LrSchedule, Mode, OptimizerKind, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    /// Every parameter trained at `head_lr`.
    Scratch,
    /// Only the head is trained; the backbone is frozen bit-for-bit.
    LinearProbe,
    /// Head at `head_lr`, backbone at `backbone_lr`.
    FineTune,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferMode {
    pub kind: TransferKind,
    pub head_lr: f64,
    pub backbone_lr: f64,
}

impl TransferMode {
    pub fn scratch(lr: f64) -> Self {
        TransferMode {
            kind: TransferKind::Scratch,
            head_lr: lr,
            backbone_lr: lr,
        }
    }

    pub fn linear_probe(head_lr: f64) -> Self {
        TransferMode {
            kind: TransferKind::LinearProbe,
            head_lr,
            backbone_lr: 0.0,
        }
    }

    pub fn fine_tune(head_lr: f64, backbone_lr: f64) -> Self {
        TransferMode {
            kind: TransferKind::FineTune,
            head_lr,
            backbone_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.head_lr >= 0.0 && self.backbone_lr >= 0.0) {
            return Err(Error::config("learning rates must be non-negative"));
        }
        Ok(())
    }

    /// Train/eval mode and trainability of each half of the network. Batch
    /// norm statistics of the backbone stay fixed unless training from
    /// scratch.
    fn forward_mode(&self) -> ForwardMode {
        let (backbone, backbone_trainable) = match self.kind {
            TransferKind::Scratch => (Mode::Train, true),
            TransferKind::LinearProbe => (Mode::Eval, false),
            TransferKind::FineTune => (Mode::Eval, true),
        };
        ForwardMode {
            backbone,
            head: Mode::Train,
            backbone_trainable,
            head_trainable: true,
        }
    }
}

impl Default for TransferMode {
    fn default() -> Self {
        TransferMode::fine_tune(1e-1, 1e-3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeechHyper {
    pub epochs: u32,
    pub batch_size: usize,
    /// Chunk lengths (frames); one is drawn per batch.
    pub chunk_set: Vec<usize>,
    pub padding: ChunkPadding,
    /// Masking policy for augmented copies; the `none` policy disables augmentation.
    pub augment: AugmentPolicy,
    /// Masked copies per segment and epoch when augmentation is enabled.
    pub copies: usize,
    pub constant_epochs: u32,
    pub halving_period: u32,
    /// Stop once an epoch's training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for SpeechHyper {
    fn default() -> Self {
        SpeechHyper {
            epochs: 50,
            batch_size: 32,
            chunk_set: vec![150, 200, 250, 300],
            padding: ChunkPadding::Repeat,
            augment: AugmentPolicy::conservative(),
            copies: 2,
            constant_epochs: 8,
            halving_period: 2,
            target_accuracy: None,
            seed: 0,
        }
    }
}

impl SpeechHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::config("need epochs >= 1 and batch_size >= 2"));
        }
        if self.chunk_set.is_empty() || self.chunk_set.contains(&0) {
            return Err(Error::config("chunk set must be non-empty and positive"));
        }
        self.schedule().validate()
    }

    fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: 1.0,
            constant_epochs: self.constant_epochs,
            halving_period: self.halving_period,
        }
    }
}

/// Splits shuffled items into batches, folding a trailing single item into
/// the previous batch (batch norm needs at least two examples).
pub(crate) fn batches<T: Copy>(items: &[T], size: usize) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = items.chunks(size).map(<[T]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

fn check_data(model: &SpeechModel, data: &[(&LogMelSpectrogram, usize)]) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::input(format!("training needs at least 2 segments, got {}", data.len())));
    }
    for (spec, label) in data {
        if *label >= model.n_classes() {
            return Err(Error::LabelOutOfRange {
                label: *label,
                n_classes: model.n_classes(),
            });
        }
        if spec.n_mels != model.config().n_mels {
            return Err(Error::shape("speech training", format!("segment {} has {} mel bins", spec.segment_id, spec.n_mels)));
        }
        if !spec.normalized {
            return Err(Error::input(format!("segment {} is not normalized", spec.segment_id)));
        }
    }
    Ok(())
}

fn run_training(
    model: &mut SpeechModel,
    data: &[(&LogMelSpectrogram, usize)],
    mode: TransferMode,
    hyper: &SpeechHyper,
) -> Result<History> {
    hyper.validate()?;
    mode.validate()?;
    check_data(model, data)?;
    hyper.augment.validate(model.config().n_mels)?;
    let fm = mode.forward_mode();
    let is_head: Vec<bool> = model.params().iter().map(|(_, n, _)| SpeechModel::is_head(n)).collect();
    let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(2);
    let copies = if hyper.augment.is_identity() { 0 } else { hyper.copies };
    let mut items: Vec<(usize, usize)> = (0..data.len()).flat_map(|i| (0..=copies).map(move |v| (i, v))).collect();
    let schedule = hyper.schedule();
    let mut history = History::default();
    for epoch in 1..=hyper.epochs {
        let factor = schedule.factor_at(epoch);
        let (head_lr, backbone_lr) = match mode.kind {
            TransferKind::Scratch => (mode.head_lr * factor, mode.head_lr * factor),
            _ => (mode.head_lr * factor, mode.backbone_lr * factor),
        };
        items.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batches(&items, hyper.batch_size) {
            let len = hyper.chunk_set[rng.random_range(0..hyper.chunk_set.len())];
            let mut chunks = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &(i, variant) in &batch {
                let (spec, label) = data[i];
                let (mut chunk, _) = chunk_of_len(spec, len, hyper.padding, &mut rng);
                if variant > 0 {
                    chunk = apply_masks(&chunk, &hyper.augment, &mut rng)?;
                }
                chunks.push(chunk);
                labels.push(label);
            }
            let refs: Vec<&LogMelSpectrogram> = chunks.iter().collect();
            let x = model.batch_tensor(&refs)?;
            let mut g = Graph::new();
            let xi = g.input(x);
            let out = model.forward(&mut g, xi, fm)?;
            let loss = g.cross_entropy(out.logits, &labels)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::input(format!("non-finite training loss at epoch {epoch}")));
            }
            loss_sum += loss_value * batch.len() as f64;
            let logits = g.value(out.logits);
            let k = model.n_classes();
            for (row, &label) in logits.data().chunks(k).zip(&labels) {
                if argmax(row) == label {
                    correct += 1;
                }
            }
            let grads = g.backward(loss)?;
            let pg = g.param_grads(&grads);
            opt.apply(model.params_mut(), &pg, |id| if is_head[id.0] { head_lr } else { backbone_lr })?;
            model.update_running(&out.batch_stats);
        }
        let n = items.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            lr: head_lr,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} accuracy {:.4} lr {:.2e}",
            record.loss,
            record.accuracy,
            record.lr
        );
        let done = hyper.target_accuracy.is_some_and(|t| record.accuracy >= t);
        history.epochs.push(record);
        if done {
            break;
        }
    }
    Ok(history)
}

/// Trains a fresh model to classify speakers. `data` pairs each
/// spectrogram with its speaker index into `speakers`.
pub fn pretrain_speaker_id(
    config: &ResNetConfig,
    data: &[(&LogMelSpectrogram, usize)],
    speakers: &[String],
    lr: f64,
    hyper: &SpeechHyper,
) -> Result<(SpeechModel, History)> {
    let present: std::collections::BTreeSet<usize> = data.iter().map(|(_, s)| *s).collect();
    if present.len() < 2 {
        return Err(Error::input("speaker pretraining needs at least 2 speakers"));
    }
    let config = ResNetConfig {
        n_classes: speakers.len(),
        ..config.clone()
    };
    let mut model = SpeechModel::new(&config, hyper.seed)?;
    model.classes = speakers.to_vec();
    let history = run_training(&mut model, data, TransferMode::scratch(lr), hyper)?;
    Ok((model, history))
}

/// Trains an emotion classifier in the given transfer mode.
pub fn train_ser(
    model: &mut SpeechModel,
    data: &[(&LogMelSpectrogram, usize)],
    mode: TransferMode,
    hyper: &SpeechHyper,
) -> Result<History> {
    run_training(model, data, mode, hyper)
}

/// Per-class log-posteriors for one full-length normalized segment.
pub fn score_segment(model: &SpeechModel, spec: &LogMelSpectrogram) -> Result<Vec<f64>> {
    if !spec.normalized {
        return Err(Error::input(format!("segment {} is not normalized", spec.segment_id)));
    }
    let mut logits = model.logits(spec)?;
    log_softmax_in_place(&mut logits);
    Ok(logits)
}

pub fn score_segments(model: &SpeechModel, specs: &[&LogMelSpectrogram]) -> Result<Vec<Vec<f64>>> {
    specs.iter().map(|s| score_segment(model, s)).collect()
}
