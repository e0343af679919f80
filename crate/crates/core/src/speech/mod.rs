//! ResNet-style speech classifier with statistics pooling.
//!
//! Input is a batch of spectrograms shaped `[N, 1, frames, mels]`. A
//! strided stem and four residual stages feed a pooling layer that reduces
//! the (variable) time axis to a fixed vector, followed by the FC head:
//! `linear → batch norm → PReLU → linear`. Parameters whose names start with
//! `head.` form the head; everything else is the backbone.

mod train;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::LogMelSpectrogram;
use crate::nn::params::{he_normal, lecun_normal};
use crate::nn::{conv_out_len, BatchStats, Checkpoint, Graph, Mode, NodeId, ParamId, ParamStore, RunningStats, Tensor};

pub use train::{pretrain_speaker_id, score_segment, score_segments, train_ser, SpeechHyper, TransferKind, TransferMode};

pub const HEAD_PREFIX: &str = "head.";
pub const CHECKPOINT_KIND: &str = "speech";
const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Resnet34Full,
    ResnetLiteDesk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean and standard deviation over time.
    Stats,
    MeanOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNetConfig {
    pub preset: Preset,
    pub first_block_channels: usize,
    pub embedding_dim: usize,
    pub pooling: Pooling,
    pub n_classes: usize,
    #[serde(default = "default_mels")]
    pub n_mels: usize,
}

fn default_mels() -> usize {
    128
}

/// Layer layout implied by a preset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub blocks: [usize; 4],
    pub channel_mult: [usize; 4],
    pub stem_stride: usize,
    pub stage_strides: [usize; 4],
}

impl Preset {
    pub fn architecture(self) -> Architecture {
        match self {
            Preset::Resnet34Full => Architecture {
                blocks: [3, 4, 6, 3],
                channel_mult: [1, 2, 4, 8],
                stem_stride: 1,
                stage_strides: [1, 2, 2, 2],
            },
            Preset::ResnetLiteDesk => Architecture {
                blocks: [1, 1, 1, 1],
                channel_mult: [1, 2, 4, 4],
                stem_stride: 2,
                stage_strides: [2, 2, 2, 2],
            },
        }
    }
}

impl ResNetConfig {
    pub fn desk(n_classes: usize) -> Self {
        ResNetConfig {
            preset: Preset::ResnetLiteDesk,
            first_block_channels: 32,
            embedding_dim: 64,
            pooling: Pooling::Stats,
            n_classes,
            n_mels: 128,
        }
    }

    pub fn full(n_classes: usize) -> Self {
        ResNetConfig {
            preset: Preset::Resnet34Full,
            first_block_channels: 32,
            embedding_dim: 512,
            pooling: Pooling::Stats,
            n_classes,
            n_mels: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_block_channels == 0 || self.embedding_dim == 0 || self.n_mels == 0 {
            return Err(Error::config("channels, embedding_dim and n_mels must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("a classifier needs at least 2 classes"));
        }
        Ok(())
    }

    /// Total stride along time (and frequency) of the convolutional stack.
    pub fn total_stride(&self) -> usize {
        let a = self.preset.architecture();
        a.stem_stride * a.stage_strides.iter().product::<usize>()
    }

    /// Shortest input accepted: one output frame per stride period.
    pub fn min_frames(&self) -> usize {
        self.total_stride()
    }

    fn channels(&self, stage: usize) -> usize {
        self.first_block_channels * self.preset.architecture().channel_mult[stage]
    }

    fn out_mels(&self) -> usize {
        let a = self.preset.architecture();
        let mut f = conv_out_len(self.n_mels, 3, a.stem_stride, 1);
        for (s, &n) in a.stage_strides.iter().zip(&a.blocks) {
            if n > 0 {
                f = conv_out_len(f, 3, *s, 1);
            }
        }
        f
    }

    /// Width of the pooled vector entering the head.
    pub fn pooled_dim(&self) -> usize {
        let d = self.channels(3) * self.out_mels();
        match self.pooling {
            Pooling::Stats => 2 * d,
            Pooling::MeanOnly => d,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: ParamId,
    gamma: ParamId,
    beta: ParamId,
    key: String,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: ConvBn,
    act1: ParamId,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
    act2: ParamId,
}

#[derive(Clone, Debug)]
struct Head {
    fc1_w: ParamId,
    fc1_b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    act: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

const HEAD_BN: &str = "head.bn";

/// How the forward pass treats each half of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub backbone: Mode,
    pub head: Mode,
    pub backbone_trainable: bool,
    pub head_trainable: bool,
}

impl ForwardMode {
    pub const EVAL: ForwardMode = ForwardMode {
        backbone: Mode::Eval,
        head: Mode::Eval,
        backbone_trainable: false,
        head_trainable: false,
    };
}

/// Output of a forward pass.
pub struct Forward {
    pub logits: NodeId,
    /// Batch statistics for every batch norm run in train mode.
    pub batch_stats: Vec<(String, BatchStats)>,
}

#[derive(Clone, Debug)]
pub struct SpeechModel {
    config: ResNetConfig,
    params: ParamStore,
    running: BTreeMap<String, RunningStats>,
    stem: ConvBn,
    stem_act: ParamId,
    blocks: Vec<Block>,
    head: Head,
    /// Class names, in index order.
    pub classes: Vec<String>,
}

fn conv_bn(
    params: &mut ParamStore,
    running: &mut BTreeMap<String, RunningStats>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
) -> ConvBn {
    let conv = params.insert(
        format!("{prefix}.conv.weight"),
        he_normal(&[cout, cin, k, k], cin * k * k, rng),
    );
    let gamma = params.insert(format!("{prefix}.bn.gamma"), Tensor::full(&[cout], 1.0));
    let beta = params.insert(format!("{prefix}.bn.beta"), Tensor::zeros(&[cout]));
    let key = format!("{prefix}.bn");
    running.insert(key.clone(), RunningStats::new(cout));
    ConvBn {
        conv,
        gamma,
        beta,
        key,
        stride,
        pad: k / 2,
    }
}

fn prelu(params: &mut ParamStore, name: String, c: usize) -> ParamId {
    params.insert(name, Tensor::full(&[c], PRELU_INIT))
}

impl SpeechModel {
    /// Builds a freshly initialised model.
    pub fn new(config: &ResNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = config.preset.architecture();
        let mut params = ParamStore::new();
        let mut running = BTreeMap::new();
        let c0 = config.channels(0);
        let stem = conv_bn(&mut params, &mut running, &mut rng, "stem", 1, c0, 3, arch.stem_stride);
        let stem_act = prelu(&mut params, "stem.act".into(), c0);
        let mut blocks = Vec::new();
        let mut cin = c0;
        for stage in 0..4 {
            let cout = config.channels(stage);
            for b in 0..arch.blocks[stage] {
                let stride = if b == 0 { arch.stage_strides[stage] } else { 1 };
                let p = format!("stage{}.block{b}", stage + 1);
                let conv1 = conv_bn(&mut params, &mut running, &mut rng, &format!("{p}.c1"), cin, cout, 3, stride);
                let act1 = prelu(&mut params, format!("{p}.act1"), cout);
                let conv2 = conv_bn(&mut params, &mut running, &mut rng, &format!("{p}.c2"), cout, cout, 3, 1);
                let shortcut = (stride != 1 || cin != cout)
                    .then(|| conv_bn(&mut params, &mut running, &mut rng, &format!("{p}.down"), cin, cout, 1, stride));
                let act2 = prelu(&mut params, format!("{p}.act2"), cout);
                blocks.push(Block {
                    conv1,
                    act1,
                    conv2,
                    shortcut,
                    act2,
                });
                cin = cout;
            }
        }
        let mut model = SpeechModel {
            config: config.clone(),
            params,
            running,
            stem,
            stem_act,
            blocks,
            head: Head {
                fc1_w: ParamId(0),
                fc1_b: ParamId(0),
                gamma: ParamId(0),
                beta: ParamId(0),
                act: ParamId(0),
                fc2_w: ParamId(0),
                fc2_b: ParamId(0),
            },
            classes: (0..config.n_classes).map(|c| c.to_string()).collect(),
        };
        model.init_head(config.n_classes, &mut rng);
        Ok(model)
    }

    fn init_head(&mut self, n_classes: usize, rng: &mut ChaCha8Rng) {
        let pooled = self.config.pooled_dim();
        let e = self.config.embedding_dim;
        let p = &mut self.params;
        self.head = Head {
            fc1_w: p.insert("head.fc1.weight", he_normal(&[pooled, e], pooled, rng)),
            fc1_b: p.insert("head.fc1.bias", Tensor::zeros(&[e])),
            gamma: p.insert("head.bn.gamma", Tensor::full(&[e], 1.0)),
            beta: p.insert("head.bn.beta", Tensor::zeros(&[e])),
            act: p.insert("head.act", Tensor::full(&[e], PRELU_INIT)),
            fc2_w: p.insert("head.fc2.weight", lecun_normal(&[e, n_classes], e, rng)),
            fc2_b: p.insert("head.fc2.bias", Tensor::zeros(&[n_classes])),
        };
        self.running.insert(HEAD_BN.into(), RunningStats::new(e));
        self.config.n_classes = n_classes;
        self.classes = (0..n_classes).map(|c| c.to_string()).collect();
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.running
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn is_head(name: &str) -> bool {
        name.starts_with(HEAD_PREFIX)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    /// SHA-256 over backbone parameters and running statistics.
    pub fn backbone_checksum(&self) -> String {
        let mut store = ParamStore::new();
        for (_, name, t) in self.params.iter().filter(|(_, n, _)| !Self::is_head(n)) {
            store.insert(name, t.clone());
        }
        for (key, rs) in self.running.iter().filter(|(k, _)| !Self::is_head(k)) {
            store.insert(format!("{key}.running_mean"), Tensor::new(vec![rs.mean.len()], rs.mean.clone()).unwrap());
            store.insert(format!("{key}.running_var"), Tensor::new(vec![rs.var.len()], rs.var.clone()).unwrap());
        }
        store.checksum(|_| true)
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[(String, BatchStats)]) {
        for (key, s) in stats {
            if let Some(rs) = self.running.get_mut(key) {
                rs.update(s);
            }
        }
    }

    fn check_input(&self, spec: &LogMelSpectrogram) -> Result<()> {
        if spec.n_mels != self.config.n_mels {
            return Err(Error::shape(
                "speech model",
                format!("expected {} mel bins, got {}", self.config.n_mels, spec.n_mels),
            ));
        }
        if spec.n_frames < self.config.min_frames() {
            return Err(Error::TooFewFrames {
                frames: spec.n_frames,
                min: self.config.min_frames(),
            });
        }
        Ok(())
    }

    /// Stacks equal-length spectrograms into a `[N, 1, T, M]` tensor.
    pub fn batch_tensor(&self, specs: &[&LogMelSpectrogram]) -> Result<Tensor> {
        let first = specs.first().ok_or_else(|| Error::input("empty batch"))?;
        let mut data = Vec::with_capacity(specs.len() * first.data.len());
        for s in specs {
            self.check_input(s)?;
            if s.n_frames != first.n_frames {
                return Err(Error::shape("speech batch", "spectrograms differ in length"));
            }
            data.extend_from_slice(&s.data);
        }
        Tensor::new(vec![specs.len(), 1, first.n_frames, first.n_mels], data)
    }

    fn conv_bn_fwd(
        &self,
        g: &mut Graph,
        x: NodeId,
        cb: &ConvBn,
        mode: Mode,
        trainable: bool,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Result<NodeId> {
        let w = g.param(&self.params, cb.conv, trainable);
        let y = g.conv2d(x, w, (cb.stride, cb.stride), (cb.pad, cb.pad))?;
        let gamma = g.param(&self.params, cb.gamma, trainable);
        let beta = g.param(&self.params, cb.beta, trainable);
        self.bn(g, y, gamma, beta, &cb.key, mode, stats)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn(
        &self,
        g: &mut Graph,
        y: NodeId,
        gamma: NodeId,
        beta: NodeId,
        key: &str,
        mode: Mode,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Result<NodeId> {
        match mode {
            Mode::Train => {
                let (out, s) = g.batch_norm_train(y, gamma, beta)?;
                stats.push((key.to_string(), s));
                Ok(out)
            }
            Mode::Eval => {
                let rs = &self.running[key];
                g.batch_norm_eval(y, gamma, beta, &rs.mean, &rs.var)
            }
        }
    }

    /// Pooled embedding input to the head, for a `[N, 1, T, M]` input node.
    pub fn backbone(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
        trainable: bool,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[3] != self.config.n_mels {
            return Err(Error::shape("speech model", format!("input shape {shape:?}")));
        }
        if shape[2] < self.config.min_frames() {
            return Err(Error::TooFewFrames {
                frames: shape[2],
                min: self.config.min_frames(),
            });
        }
        let y = self.conv_bn_fwd(g, x, &self.stem, mode, trainable, stats)?;
        let a = g.param(&self.params, self.stem_act, trainable);
        let mut h = g.prelu(y, a)?;
        for b in &self.blocks {
            let y = self.conv_bn_fwd(g, h, &b.conv1, mode, trainable, stats)?;
            let a1 = g.param(&self.params, b.act1, trainable);
            let y = g.prelu(y, a1)?;
            let y = self.conv_bn_fwd(g, y, &b.conv2, mode, trainable, stats)?;
            let skip = match &b.shortcut {
                Some(sc) => self.conv_bn_fwd(g, h, sc, mode, trainable, stats)?,
                None => h,
            };
            let y = g.add(y, skip)?;
            let a2 = g.param(&self.params, b.act2, trainable);
            h = g.prelu(y, a2)?;
        }
        g.stats_pool(h, self.config.pooling == Pooling::Stats)
    }

    /// Logits for a `[N, 1, T, M]` input node.
    pub fn forward(&self, g: &mut Graph, x: NodeId, fm: ForwardMode) -> Result<Forward> {
        let mut stats = Vec::new();
        let pooled = self.backbone(g, x, fm.backbone, fm.backbone_trainable, &mut stats)?;
        let t = fm.head_trainable;
        let h = &self.head;
        let w1 = g.param(&self.params, h.fc1_w, t);
        let b1 = g.param(&self.params, h.fc1_b, t);
        let e = g.linear(pooled, w1, Some(b1))?;
        let gamma = g.param(&self.params, h.gamma, t);
        let beta = g.param(&self.params, h.beta, t);
        let e = self.bn(g, e, gamma, beta, HEAD_BN, fm.head, &mut stats)?;
        let a = g.param(&self.params, h.act, t);
        let e = g.prelu(e, a)?;
        let w2 = g.param(&self.params, h.fc2_w, t);
        let b2 = g.param(&self.params, h.fc2_b, t);
        let logits = g.linear(e, w2, Some(b2))?;
        Ok(Forward {
            logits,
            batch_stats: stats,
        })
    }

    /// Eval-mode logits for one full-length spectrogram.
    pub fn logits(&self, spec: &LogMelSpectrogram) -> Result<Vec<f64>> {
        let x = self.batch_tensor(&[spec])?;
        let mut g = Graph::new();
        let xi = g.input(x);
        let out = self.forward(&mut g, xi, ForwardMode::EVAL)?;
        Ok(g.value(out.logits).data().to_vec())
    }

    /// Replaces the head with a freshly initialised one for `n_classes`.
    pub fn swap_head(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::config("a classifier needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept = ParamStore::new();
        for (_, name, t) in self.params.iter().filter(|(_, n, _)| !Self::is_head(n)) {
            kept.insert(name, t.clone());
        }
        self.params = kept;
        self.init_head(n_classes, &mut rng);
        Ok(())
    }

    pub fn to_checkpoint(&self, epoch: u32) -> Checkpoint {
        let meta = serde_json::json!({ "config": self.config, "classes": self.classes });
        let mut tensors: Vec<(String, Tensor)> =
            self.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        for (key, rs) in &self.running {
            let n = rs.mean.len();
            tensors.push((format!("{key}.running_mean"), Tensor::new(vec![n], rs.mean.clone()).unwrap()));
            tensors.push((format!("{key}.running_var"), Tensor::new(vec![n], rs.var.clone()).unwrap()));
        }
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: meta.to_string(),
            epoch,
            tensors,
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a speech checkpoint, found {:?}", ck.kind)));
        }
        #[derive(Deserialize)]
        struct Meta {
            config: ResNetConfig,
            classes: Vec<String>,
        }
        let meta: Meta = serde_json::from_str(&ck.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let mut model = SpeechModel::new(&meta.config, 0)?;
        for (_, name, t) in model.params.clone().iter() {
            let src = ck.tensor(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}", src.shape())));
            }
            let id = model.params.id(name).unwrap();
            *model.params.get_mut(id) = src.clone();
        }
        for (key, rs) in model.running.iter_mut() {
            for (suffix, slot) in [("running_mean", &mut rs.mean), ("running_var", &mut rs.var)] {
                let name = format!("{key}.{suffix}");
                let src = ck.tensor(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if src.numel() != slot.len() {
                    return Err(Error::Checkpoint(format!("tensor {name} has the wrong size")));
                }
                slot.copy_from_slice(src.data());
            }
        }
        let expected = model.params.len() + 2 * model.running.len();
        if ck.tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {expected}",
                ck.tensors.len()
            )));
        }
        model.classes = meta.classes;
        Ok(model)
    }
}

/// Loads a checkpoint and replaces its head with a new one for `n_classes`.
pub fn swap_head(ck: &Checkpoint, n_classes: usize, seed: u64) -> Result<SpeechModel> {
    let mut model = SpeechModel::from_checkpoint(ck)?;
    model.swap_head(n_classes, seed)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_classes: usize) -> ResNetConfig {
        ResNetConfig {
            first_block_channels: 4,
            embedding_dim: 8,
            n_mels: 16,
            ..ResNetConfig::desk(n_classes)
        }
    }

    fn spec(frames: usize, mels: usize, seed: u64) -> LogMelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::randn(&[frames * mels], 1.0, &mut rng);
        let mut s = LogMelSpectrogram::new("x", frames, mels, t.into_data()).unwrap();
        s.normalized = true;
        s
    }

    #[test]
    fn variable_length_logits() {
        let m = SpeechModel::new(&ResNetConfig::desk(4), 1).unwrap();
        assert_eq!(m.logits(&spec(150, 128, 0)).unwrap().len(), 4);
        assert_eq!(m.logits(&spec(437, 128, 0)).unwrap().len(), 4);
        assert!(matches!(m.logits(&spec(31, 128, 0)), Err(Error::TooFewFrames { min: 32, .. })));
    }

    #[test]
    fn lite_is_much_smaller_than_full() {
        let lite = SpeechModel::new(&ResNetConfig::desk(4), 0).unwrap().num_params();
        let full = SpeechModel::new(&ResNetConfig::full(4), 0).unwrap().num_params();
        assert!(lite * 10 < full, "lite {lite} full {full}");
    }

    #[test]
    fn pooled_dims() {
        let c = ResNetConfig::desk(4);
        assert_eq!(c.pooled_dim(), 2 * 128 * 4);
        let c = ResNetConfig {
            pooling: Pooling::MeanOnly,
            ..c
        };
        assert_eq!(c.pooled_dim(), 128 * 4);
        assert_eq!(ResNetConfig::full(4).min_frames(), 8);
    }

    #[test]
    fn checkpoint_round_trip_and_swap() {
        let m = SpeechModel::new(&tiny(5), 3).unwrap();
        let ck = m.to_checkpoint(2);
        let bytes = ck.to_bytes();
        let back = SpeechModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint(2).to_bytes(), bytes);

        let a = swap_head(&ck, 4, 10).unwrap();
        let b = swap_head(&ck, 4, 11).unwrap();
        assert_eq!(a.n_classes(), 4);
        assert_eq!(a.backbone_checksum(), m.backbone_checksum());
        for (_, name, t) in m.params().iter().filter(|(_, n, _)| !SpeechModel::is_head(n)) {
            assert_eq!(a.params().by_name(name).unwrap(), t);
        }
        let differs: Vec<&str> = a
            .params()
            .iter()
            .filter(|(_, n, t)| b.params().by_name(n).unwrap() != *t)
            .map(|(_, n, _)| n)
            .collect();
        assert!(!differs.is_empty());
        assert!(differs.iter().all(|n| SpeechModel::is_head(n)));
        assert_eq!(a.logits(&spec(40, 16, 1)).unwrap().len(), 4);
    }

    #[test]
    fn wrong_checkpoint_kind_rejected() {
        let mut ck = SpeechModel::new(&tiny(3), 0).unwrap().to_checkpoint(0);
        ck.kind = "text".into();
        assert!(SpeechModel::from_checkpoint(&ck).is_err());
    }
}
