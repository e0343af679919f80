use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::params::lecun_normal;
use crate::nn::{Checkpoint, Graph, NodeId, ParamId, ParamStore, Tensor};

pub const CHECKPOINT_KIND: &str = "text";
const EMBED_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub n_classes: usize,
    /// Feed-forward width as a multiple of `hidden_dim`.
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
}

fn default_ffn_mult() -> usize {
    4
}

impl TransformerConfig {
    pub fn desk() -> Self {
        TransformerConfig {
            n_layers: 2,
            n_heads: 4,
            hidden_dim: 64,
            max_len: 64,
            n_classes: 4,
            ffn_mult: 4,
        }
    }

    /// Dimensions of the base-size pretrained encoder, kept for reference.
    pub fn full() -> Self {
        TransformerConfig {
            n_layers: 12,
            n_heads: 12,
            hidden_dim: 768,
            max_len: 128,
            n_classes: 4,
            ffn_mult: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.hidden_dim == 0 || self.ffn_mult == 0 {
            return Err(Error::config("transformer sizes must be >= 1"));
        }
        if !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.max_len < 2 || self.n_classes < 2 {
            return Err(Error::config("need max_len >= 2 and n_classes >= 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    ids: [ParamId; 16],
}

const LAYER_PARAMS: [&str; 16] = [
    "q.weight", "q.bias", "k.weight", "k.bias", "v.weight", "v.bias", "o.weight", "o.bias", "ln1.gamma", "ln1.beta",
    "ff1.weight", "ff1.bias", "ff2.weight", "ff2.bias", "ln2.gamma", "ln2.beta",
];

/// Graph nodes holding one encoder layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerNodes {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
    pub ln1_g: NodeId,
    pub ln1_b: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub ln2_g: NodeId,
    pub ln2_b: NodeId,
}

impl LayerNodes {
    /// Builds from nodes in the order of the layer's parameter list.
    pub fn from_slice(n: &[NodeId]) -> Self {
        LayerNodes {
            wq: n[0],
            bq: n[1],
            wk: n[2],
            bk: n[3],
            wv: n[4],
            bv: n[5],
            wo: n[6],
            bo: n[7],
            ln1_g: n[8],
            ln1_b: n[9],
            w1: n[10],
            b1: n[11],
            w2: n[12],
            b2: n[13],
            ln2_g: n[14],
            ln2_b: n[15],
        }
    }
}

/// Splits `[B·L, H]` into heads: `[B·heads, L, H/heads]`.
fn split_heads(g: &mut Graph, x: NodeId, b: usize, l: usize, heads: usize, dh: usize) -> Result<NodeId> {
    let x = g.reshape(x, &[b, l, heads, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[b * heads, l, dh])
}

/// One post-norm encoder layer: masked multi-head self-attention and a GELU
/// feed-forward block, each followed by residual addition and layer norm.
/// `x` is `[batch·len, hidden]`; `key_mask[b·len + j]` marks real tokens.
pub fn encoder_layer(
    g: &mut Graph,
    x: NodeId,
    p: &LayerNodes,
    batch: usize,
    len: usize,
    heads: usize,
    key_mask: &[bool],
) -> Result<NodeId> {
    let h = g.value(x).dim(1);
    if !h.is_multiple_of(heads) || key_mask.len() != batch * len {
        return Err(Error::shape("encoder layer", format!("hidden {h}, heads {heads}, mask {}", key_mask.len())));
    }
    let dh = h / heads;
    let q = g.linear(x, p.wq, Some(p.bq))?;
    let k = g.linear(x, p.wk, Some(p.bk))?;
    let v = g.linear(x, p.wv, Some(p.bv))?;
    let q = split_heads(g, q, batch, len, heads, dh)?;
    let k = split_heads(g, k, batch, len, heads, dh)?;
    let v = split_heads(g, v, batch, len, heads, dh)?;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let mut head_mask = Vec::with_capacity(batch * heads * len);
    for b in 0..batch {
        for _ in 0..heads {
            head_mask.extend_from_slice(&key_mask[b * len..(b + 1) * len]);
        }
    }
    let attn = g.masked_softmax(scores, &head_mask)?;
    let ctx = g.bmm(attn, v, false)?;
    let ctx = g.reshape(ctx, &[batch, heads, len, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[batch * len, h])?;
    let o = g.linear(ctx, p.wo, Some(p.bo))?;
    let x = g.add(x, o)?;
    let x = g.layer_norm(x, p.ln1_g, p.ln1_b)?;
    let f = g.linear(x, p.w1, Some(p.b1))?;
    let f = g.gelu(f);
    let f = g.linear(f, p.w2, Some(p.b2))?;
    let x = g.add(x, f)?;
    g.layer_norm(x, p.ln2_g, p.ln2_b)
}

#[derive(Clone, Debug)]
pub struct TextModel {
    config: TransformerConfig,
    vocab_size: usize,
    params: ParamStore,
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln: (ParamId, ParamId),
    layers: Vec<LayerIds>,
    cls_w: ParamId,
    cls_b: ParamId,
}

impl TextModel {
    pub fn new(config: &TransformerConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size < 4 {
            return Err(Error::config("vocabulary must contain the special tokens"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let f = h * config.ffn_mult;
        let mut p = ParamStore::new();
        let tok_emb = p.insert("emb.token", Tensor::randn(&[vocab_size, h], EMBED_STD, &mut rng));
        let pos_emb = p.insert("emb.position", Tensor::randn(&[config.max_len, h], EMBED_STD, &mut rng));
        let emb_ln = (
            p.insert("emb.ln.gamma", Tensor::full(&[h], 1.0)),
            p.insert("emb.ln.beta", Tensor::zeros(&[h])),
        );
        let mut layers = Vec::new();
        for i in 0..config.n_layers {
            let ids = LAYER_PARAMS.map(|name| {
                let t = match name {
                    "q.weight" | "k.weight" | "v.weight" | "o.weight" => lecun_normal(&[h, h], h, &mut rng),
                    "ff1.weight" => lecun_normal(&[h, f], h, &mut rng),
                    "ff2.weight" => lecun_normal(&[f, h], f, &mut rng),
                    "ff1.bias" => Tensor::zeros(&[f]),
                    "ln1.gamma" | "ln2.gamma" => Tensor::full(&[h], 1.0),
                    _ => Tensor::zeros(&[h]),
                };
                p.insert(format!("layer{i}.{name}"), t)
            });
            layers.push(LayerIds { ids });
        }
        let cls_w = p.insert("head.weight", lecun_normal(&[h, config.n_classes], h, &mut rng));
        let cls_b = p.insert("head.bias", Tensor::zeros(&[config.n_classes]));
        Ok(TextModel {
            config: config.clone(),
            vocab_size,
            params: p,
            tok_emb,
            pos_emb,
            emb_ln,
            layers,
            cls_w,
            cls_b,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Logits node for a batch of sequences. Positions past the longest real
    /// sequence in the batch are dropped; they are padding in every row and
    /// cannot influence the result.
    pub fn forward(&self, g: &mut Graph, seqs: &[&TokenSequence], trainable: bool) -> Result<NodeId> {
        let batch = seqs.len();
        if batch == 0 {
            return Err(Error::input("empty text batch"));
        }
        let mut len = 0;
        for s in seqs {
            if s.ids.len() != self.config.max_len || s.attention_mask.len() != self.config.max_len {
                return Err(Error::shape(
                    "text model",
                    format!("sequence length {} vs max_len {}", s.ids.len(), self.config.max_len),
                ));
            }
            if let Some(&bad) = s.ids.iter().find(|&&i| i >= self.vocab_size) {
                return Err(Error::input(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
            }
            len = len.max(s.attention_mask.iter().rposition(|&m| m == 1).map_or(0, |p| p + 1));
        }
        if len == 0 {
            return Err(Error::input("sequence without real tokens"));
        }
        let h = self.config.hidden_dim;
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.ids[..len].iter().copied()).collect();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let key_mask: Vec<bool> = seqs.iter().flat_map(|s| s.attention_mask[..len].iter().map(|&m| m == 1)).collect();

        let tok_table = g.param(&self.params, self.tok_emb, trainable);
        let pos_table = g.param(&self.params, self.pos_emb, trainable);
        let tok = g.embedding(tok_table, &ids)?;
        let pos = g.embedding(pos_table, &positions)?;
        let x = g.add(tok, pos)?;
        let lg = g.param(&self.params, self.emb_ln.0, trainable);
        let lb = g.param(&self.params, self.emb_ln.1, trainable);
        let mut x = g.layer_norm(x, lg, lb)?;
        for layer in &self.layers {
            let nodes: Vec<NodeId> = layer.ids.iter().map(|&id| g.param(&self.params, id, trainable)).collect();
            x = encoder_layer(g, x, &LayerNodes::from_slice(&nodes), batch, len, self.config.n_heads, &key_mask)?;
        }
        let x = g.reshape(x, &[batch, len, h])?;
        let cls = g.select(x, 0)?;
        let w = g.param(&self.params, self.cls_w, trainable);
        let b = g.param(&self.params, self.cls_b, trainable);
        g.linear(cls, w, Some(b))
    }

    /// Logits for one sequence.
    pub fn encode_classify(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &[seq], false)?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn to_checkpoint(&self, vocab: &Vocabulary, epoch: u32) -> Checkpoint {
        let meta = serde_json::json!({ "config": self.config, "vocab": vocab.tokens() });
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: meta.to_string(),
            epoch,
            tensors: self.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vocabulary)> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a text checkpoint, found {:?}", ck.kind)));
        }
        #[derive(Deserialize)]
        struct Meta {
            config: TransformerConfig,
            vocab: Vec<String>,
        }
        let meta: Meta = serde_json::from_str(&ck.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let vocab = Vocabulary::from_tokens(meta.vocab)?;
        let mut model = TextModel::new(&meta.config, vocab.len(), 0)?;
        if ck.tensors.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                ck.tensors.len(),
                model.params.len()
            )));
        }
        for (name, t) in &ck.tensors {
            let id = model.params.id(name).ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            if model.params.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}", t.shape())));
            }
            *model.params.get_mut(id) = t.clone();
        }
        Ok((model, vocab))
    }
}
