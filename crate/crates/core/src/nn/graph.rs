//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so walking them backwards is a valid
//! reverse topological order for [`Graph::backward`].

use super::conv;
use super::linalg::{gemm, Mat};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Variance floor used by batch and layer normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Variance floor for the standard-deviation half of statistics pooling.
pub const POOL_VAR_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Prelu {
        x: NodeId,
        slope: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    StatsPool {
        x: NodeId,
        mean: Vec<f64>,
        std: Vec<f64>,
        with_std: bool,
    },
    LogSoftmax {
        x: NodeId,
    },
    Nll {
        logp: NodeId,
        labels: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    Permute {
        x: NodeId,
        perm: Vec<usize>,
    },
    Bmm {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Scale {
        x: NodeId,
        s: f64,
    },
    MaskedSoftmax {
        x: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: NodeId,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    Select {
        x: NodeId,
        pos: usize,
    },
    WeightedSum {
        x: NodeId,
        w: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics measured by a train-mode batch norm, per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Number of values each statistic was computed from.
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, NodeId)>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Binds a parameter from `store`; `trainable = false` inserts it as a constant.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> NodeId {
        let value = store.get(id).clone();
        let node = if trainable {
            self.leaf(value)
        } else {
            self.input(value)
        };
        if trainable {
            self.bindings.push((id, node));
        }
        node
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Parameter gradients for every trainable binding, in binding order.
    pub fn param_grads<'g>(&self, grads: &'g Gradients) -> Vec<(ParamId, Option<&'g Tensor>)> {
        self.bindings
            .iter()
            .map(|&(pid, node)| (pid, grads.get(node)))
            .collect()
    }

    // ----- operations -------------------------------------------------------

    /// 2-D cross-correlation. `x`: `[N, C, H, W]`, `w`: `[O, C, KH, KW]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId> {
        let out = conv::conv2d_forward(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(out, Op::Conv2d { x, w, stride, pad }, &[x, w]))
    }

    /// Batch normalization using the statistics of the current batch.
    /// Channels live on axis 1; every other axis is reduced over.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<(NodeId, BatchStats)> {
        let xv = self.value(x);
        let (n, c, s) = channel_layout("batch_norm", xv.shape())?;
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        check_vec("batch_norm", self.value(gamma), c)?;
        check_vec("batch_norm", self.value(beta), c)?;
        let count = n * s;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let data = xv.data();
        for ch in 0..c {
            let mut sum = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * s;
                sum += data[base..base + s].iter().sum::<f64>();
            }
            let m = sum / count as f64;
            let mut sq = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * s;
                sq += data[base..base + s]
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = sq / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let out = self.affine_normalize(x, gamma, beta, &mean, &inv_std, n, c, s);
        let stats = BatchStats {
            mean: mean.clone(),
            var,
            count,
        };
        let id = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train: true,
            },
            &[x, gamma, beta],
        );
        Ok((id, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
    ) -> Result<NodeId> {
        let (n, c, s) = channel_layout("batch_norm", self.shape(x))?;
        check_vec("batch_norm", self.value(gamma), c)?;
        check_vec("batch_norm", self.value(beta), c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("running stats have {} entries for {c} channels", mean.len()),
            ));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let out = self.affine_normalize(x, gamma, beta, mean, &inv_std, n, c, s);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
                train: false,
            },
            &[x, gamma, beta],
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn affine_normalize(
        &self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        inv_std: &[f64],
        n: usize,
        c: usize,
        s: usize,
    ) -> Tensor {
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = xv.clone();
        let od = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                let (m, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                for v in &mut od[base..base + s] {
                    *v = gg * ((*v - m) * is) + bb;
                }
            }
        }
        out
    }

    /// Parametric ReLU with one slope shared or one slope per channel (axis 1).
    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let a = self.value(slope);
        let (n, c, s) = if xv.rank() >= 2 {
            channel_layout("prelu", xv.shape())?
        } else {
            (1, 1, xv.numel())
        };
        if a.numel() != 1 && a.numel() != c {
            return Err(Error::shape(
                "prelu",
                format!("{} slopes for {c} channels", a.numel()),
            ));
        }
        let mut out = xv.clone();
        let ad = a.data();
        let od = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let slope = if ad.len() == 1 { ad[0] } else { ad[ch] };
                let base = (b * c + ch) * s;
                for v in &mut od[base..base + s] {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
            }
        }
        Ok(self.push(out, Op::Prelu { x, slope }, &[x, slope]))
    }

    /// Affine map `x · w + b` with `x`: `[N, in]`, `w`: `[in, out]`, `b`: `[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) {
            return Err(Error::shape(
                "linear",
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (n, k, m) = (xv.dim(0), xv.dim(1), wv.dim(1));
        let mut out = vec![0.0; n * m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.numel() != m {
                return Err(Error::shape(
                    "linear",
                    format!("bias of {} for {m} outputs", bv.numel()),
                ));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            Mat::new(xv.data(), n, k),
            Mat::new(wv.data(), k, m),
            &mut out,
            1.0,
        );
        let out = Tensor::new(vec![n, m], out)?;
        let inputs: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    /// Statistics pooling over frames. `x`: `[N, C, T, F]` with frames on axis 2.
    /// Each frame is the `C·F` vector of its channel/bin activations; the
    /// output is `[N, 2·C·F]` (means then population stds) or `[N, C·F]`
    /// when `with_std` is false.
    pub fn stats_pool(&mut self, x: NodeId, with_std: bool) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 4 || xv.dim(2) == 0 {
            return Err(Error::shape(
                "stats_pool",
                format!("expected [N, C, T>=1, F], got {:?}", xv.shape()),
            ));
        }
        let (n, c, t, f) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let d = c * f;
        let data = xv.data();
        let mut mean = vec![0.0; n * d];
        let mut std = vec![0.0; n * d];
        for b in 0..n {
            for ch in 0..c {
                for k in 0..f {
                    let idx = |ti: usize| ((b * c + ch) * t + ti) * f + k;
                    let m = (0..t).map(|ti| data[idx(ti)]).sum::<f64>() / t as f64;
                    let var = (0..t)
                        .map(|ti| (data[idx(ti)] - m).powi(2))
                        .sum::<f64>()
                        / t as f64;
                    mean[b * d + ch * f + k] = m;
                    std[b * d + ch * f + k] = var.max(POOL_VAR_EPS).sqrt();
                }
            }
        }
        let width = if with_std { 2 * d } else { d };
        let mut out = vec![0.0; n * width];
        for b in 0..n {
            out[b * width..b * width + d].copy_from_slice(&mean[b * d..(b + 1) * d]);
            if with_std {
                out[b * width + d..(b + 1) * width].copy_from_slice(&std[b * d..(b + 1) * d]);
            }
        }
        let out = Tensor::new(vec![n, width], out)?;
        Ok(self.push(
            out,
            Op::StatsPool {
                x,
                mean,
                std,
                with_std,
            },
            &[x],
        ))
    }

    /// Row-wise log-softmax of `[N, C]` logits, computed with a max shift.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.dim(1) == 0 {
            return Err(Error::shape("log_softmax", format!("{:?}", xv.shape())));
        }
        let c = xv.dim(1);
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            log_softmax_in_place(row);
        }
        Ok(self.push(out, Op::LogSoftmax { x }, &[x]))
    }

    /// Mean negative log-likelihood of `labels` under `[N, C]` log-posteriors.
    pub fn nll(&mut self, logp: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logp);
        if lv.rank() != 2 || lv.dim(0) != labels.len() {
            return Err(Error::shape(
                "nll",
                format!("{:?} for {} labels", lv.shape(), labels.len()),
            ));
        }
        let c = lv.dim(1);
        let mut total = 0.0;
        for (row, &y) in lv.data().chunks(c).zip(labels) {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    n_classes: c,
                });
            }
            total -= row[y];
        }
        let out = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(
            out,
            Op::Nll {
                logp,
                labels: labels.to_vec(),
            },
            &[logp],
        ))
    }

    /// Categorical cross-entropy from raw logits (log-softmax then NLL).
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let logp = self.log_softmax(logits)?;
        self.nll(logp, labels)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let mut seen = vec![false; xv.rank()];
        if perm.len() != xv.rank() || perm.iter().any(|&p| p >= xv.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} is not a permutation of rank {}", xv.rank()),
            ));
        }
        let out = permute_tensor(xv, perm);
        Ok(self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    /// Batched matrix product `[B, M, K] × [B, K, N]`, or `× [B, N, K]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) {
            return Err(Error::shape(
                "bmm",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let (bs, m, k) = (av.dim(0), av.dim(1), av.dim(2));
        let (kb, n) = if trans_b {
            (bv.dim(2), bv.dim(1))
        } else {
            (bv.dim(1), bv.dim(2))
        };
        if k != kb {
            return Err(Error::shape(
                "bmm",
                format!("inner dims {k} vs {kb} ({:?} vs {:?})", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            let am = Mat::new(&av.data()[i * m * k..(i + 1) * m * k], m, k);
            let bslice = &bv.data()[i * k * n..(i + 1) * k * n];
            let bm = if trans_b {
                Mat::new(bslice, n, k).t()
            } else {
                Mat::new(bslice, k, n)
            };
            gemm(am, bm, &mut out[i * m * n..(i + 1) * m * n], 0.0);
        }
        let out = Tensor::new(vec![bs, m, n], out)?;
        Ok(self.push(out, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale { x, s }, &[x])
    }

    /// Softmax over the last axis of `[B, M, N]` scores where `key_mask[b·N + j]`
    /// says whether key `j` of batch `b` may be attended. Masked weights are exactly 0.
    pub fn masked_softmax(&mut self, x: NodeId, key_mask: &[bool]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 3 || key_mask.len() != xv.dim(0) * xv.dim(2) {
            return Err(Error::shape(
                "masked_softmax",
                format!("scores {:?} with mask of {}", xv.shape(), key_mask.len()),
            ));
        }
        let (bs, m, n) = (xv.dim(0), xv.dim(1), xv.dim(2));
        let mut out = xv.clone();
        let od = out.data_mut();
        for b in 0..bs {
            let mask = &key_mask[b * n..(b + 1) * n];
            if !mask.iter().any(|&k| k) {
                return Err(Error::input("masked_softmax: every key is masked"));
            }
            for i in 0..m {
                let row = &mut od[(b * m + i) * n..(b * m + i + 1) * n];
                let max = row
                    .iter()
                    .zip(mask)
                    .filter(|(_, &k)| k)
                    .map(|(v, _)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (v, &k) in row.iter_mut().zip(mask) {
                    if k {
                        *v = (*v - max).exp();
                        sum += *v;
                    } else {
                        *v = 0.0;
                    }
                }
                for (v, &k) in row.iter_mut().zip(mask) {
                    if k {
                        *v /= sum;
                    }
                }
            }
        }
        Ok(self.push(out, Op::MaskedSoftmax { x }, &[x]))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&0);
        check_vec("layer_norm", self.value(gamma), d)?;
        check_vec("layer_norm", self.value(beta), d)?;
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.numel() / d.max(1));
        for row in out.data_mut().chunks_mut(d) {
            let m = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = g[j] * ((*v - m) * is) + bt[j];
            }
            inv_std.push(is);
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu(*v).0);
        self.push(out, Op::Gelu { x }, &[x])
    }

    /// Row gather from a `[V, H]` table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::shape("embedding", format!("table {:?}", tv.shape())));
        }
        let (v, h) = (tv.dim(0), tv.dim(1));
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(Error::input(format!(
                    "token id {id} outside vocabulary of {v}"
                )));
            }
            out.extend_from_slice(&tv.data()[id * h..(id + 1) * h]);
        }
        let out = Tensor::new(vec![ids.len(), h], out)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Picks position `pos` along axis 1 of `[N, L, H]`.
    pub fn select(&mut self, x: NodeId, pos: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 3 || pos >= xv.dim(1) {
            return Err(Error::shape(
                "select",
                format!("position {pos} of {:?}", xv.shape()),
            ));
        }
        let (n, l, h) = (xv.dim(0), xv.dim(1), xv.dim(2));
        let mut out = Vec::with_capacity(n * h);
        for b in 0..n {
            let base = (b * l + pos) * h;
            out.extend_from_slice(&xv.data()[base..base + h]);
        }
        let out = Tensor::new(vec![n, h], out)?;
        Ok(self.push(out, Op::Select { x, pos }, &[x]))
    }

    /// Scalar `Σ xᵢ·wᵢ` against a constant weight tensor.
    pub fn weighted_sum(&mut self, x: NodeId, w: Tensor) -> Result<NodeId> {
        if self.value(x).numel() != w.numel() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{:?} vs {:?}", self.shape(x), w.shape()),
            ));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, w }, &[x]))
    }

    // ----- backward ---------------------------------------------------------

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, stride, pad } => {
                let (dx, dw) = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.wants(*x),
                    self.wants(*w),
                )?;
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, dw);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => {
                let xv = self.value(*x);
                let (n, c, s) = channel_layout("batch_norm", xv.shape())?;
                let gd = self.value(*gamma).data();
                let (xd, gout) = (xv.data(), g.data());
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    for b in 0..n {
                        let base = (b * c + ch) * s;
                        for j in base..base + s {
                            let xhat = (xd[j] - mean[ch]) * inv_std[ch];
                            dgamma[ch] += gout[j] * xhat;
                            dbeta[ch] += gout[j];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; xd.len()];
                    let count = (n * s) as f64;
                    for ch in 0..c {
                        let k = gd[ch] * inv_std[ch];
                        for b in 0..n {
                            let base = (b * c + ch) * s;
                            for j in base..base + s {
                                dx[j] = if *train {
                                    let xhat = (xd[j] - mean[ch]) * inv_std[ch];
                                    k * (gout[j] - dbeta[ch] / count - xhat * dgamma[ch] / count)
                                } else {
                                    k * gout[j]
                                };
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.wants(*gamma) {
                    let shape = self.shape(*gamma).to_vec();
                    accumulate(grads, *gamma, Tensor::new(shape, dgamma)?);
                }
                if self.wants(*beta) {
                    let shape = self.shape(*beta).to_vec();
                    accumulate(grads, *beta, Tensor::new(shape, dbeta)?);
                }
            }
            Op::Prelu { x, slope } => {
                let xv = self.value(*x);
                let av = self.value(*slope);
                let (n, c, s) = if xv.rank() >= 2 {
                    channel_layout("prelu", xv.shape())?
                } else {
                    (1, 1, xv.numel())
                };
                let shared = av.numel() == 1;
                let mut dx = vec![0.0; xv.numel()];
                let mut da = vec![0.0; av.numel()];
                for b in 0..n {
                    for ch in 0..c {
                        let ai = if shared { 0 } else { ch };
                        let a = av.data()[ai];
                        let base = (b * c + ch) * s;
                        for j in base..base + s {
                            let xj = xv.data()[j];
                            if xj < 0.0 {
                                dx[j] = a * g.data()[j];
                                da[ai] += xj * g.data()[j];
                            } else {
                                dx[j] = g.data()[j];
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.wants(*slope) {
                    accumulate(grads, *slope, Tensor::new(av.shape().to_vec(), da)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xv.dim(0), xv.dim(1), wv.dim(1));
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * k];
                    gemm(
                        Mat::new(g.data(), n, m),
                        Mat::new(wv.data(), k, m).t(),
                        &mut dx,
                        0.0,
                    );
                    accumulate(grads, *x, Tensor::new(vec![n, k], dx)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; k * m];
                    gemm(
                        Mat::new(xv.data(), n, k).t(),
                        Mat::new(g.data(), n, m),
                        &mut dw,
                        0.0,
                    );
                    accumulate(grads, *w, Tensor::new(vec![k, m], dw)?);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![0.0; m];
                        for row in g.data().chunks(m) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        let shape = self.shape(*b).to_vec();
                        accumulate(grads, *b, Tensor::new(shape, db)?);
                    }
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::StatsPool {
                x,
                mean,
                std,
                with_std,
            } => {
                let xv = self.value(*x);
                let (n, c, t, f) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
                let d = c * f;
                let width = if *with_std { 2 * d } else { d };
                let mut dx = vec![0.0; xv.numel()];
                for b in 0..n {
                    for ch in 0..c {
                        for k in 0..f {
                            let di = ch * f + k;
                            let gm = g.data()[b * width + di] / t as f64;
                            let m = mean[b * d + di];
                            let sd = std[b * d + di];
                            let gs = if *with_std && sd * sd > POOL_VAR_EPS {
                                g.data()[b * width + d + di] / (t as f64 * sd)
                            } else {
                                0.0
                            };
                            for ti in 0..t {
                                let j = ((b * c + ch) * t + ti) * f + k;
                                dx[j] = gm + gs * (xv.data()[j] - m);
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::LogSoftmax { x } => {
                let c = node.value.dim(1);
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(node.value.data().chunks(c)) {
                    let total: f64 = drow.iter().sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d -= y.exp() * total;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Nll { logp, labels } => {
                let shape = self.shape(*logp).to_vec();
                let c = shape[1];
                let mut d = Tensor::zeros(&shape);
                let scale = g.item() / labels.len() as f64;
                for (i, &y) in labels.iter().enumerate() {
                    d.data_mut()[i * c + y] = -scale;
                }
                accumulate(grads, *logp, d);
            }
            Op::Reshape { x } => {
                let shape = self.shape(*x).to_vec();
                accumulate(grads, *x, g.clone().reshape(&shape)?);
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                accumulate(grads, *x, permute_tensor(g, &inverse));
            }
            Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (av.dim(0), av.dim(1), av.dim(2));
                let n = node.value.dim(2);
                if self.wants(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        let gm = Mat::new(&g.data()[i * m * n..(i + 1) * m * n], m, n);
                        let bslice = &bv.data()[i * k * n..(i + 1) * k * n];
                        // dA = G · Bᵀ, where B is the logical [K, N] operand
                        let bt = if *trans_b {
                            Mat::new(bslice, n, k)
                        } else {
                            Mat::new(bslice, k, n).t()
                        };
                        gemm(gm, bt, &mut da[i * m * k..(i + 1) * m * k], 0.0);
                    }
                    accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        let am = Mat::new(&av.data()[i * m * k..(i + 1) * m * k], m, k);
                        let gm = Mat::new(&g.data()[i * m * n..(i + 1) * m * n], m, n);
                        let out = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // stored [N, K]: dBᵀ = Gᵀ · A
                            gemm(gm.t(), am, out, 0.0);
                        } else {
                            gemm(am.t(), gm, out, 0.0);
                        }
                    }
                    accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
            }
            Op::Scale { x, s } => {
                let mut dx = g.clone();
                dx.data_mut().iter_mut().for_each(|v| *v *= s);
                accumulate(grads, *x, dx);
            }
            Op::MaskedSoftmax { x } => {
                let n = node.value.dim(2);
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(node.value.data().chunks(n)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d = y * (*d - dot);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
            } => {
                let xv = self.value(*x);
                let d = *xv.shape().last().unwrap();
                let gd = self.value(*gamma).data();
                let mut dx = vec![0.0; xv.numel()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut gh = vec![0.0; d];
                for (r, (xrow, grow)) in xv.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
                    let m = xrow.iter().sum::<f64>() / d as f64;
                    let is = inv_std[r];
                    for j in 0..d {
                        xhat[j] = (xrow[j] - m) * is;
                        gh[j] = grow[j] * gd[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                    }
                    let sum_g: f64 = gh.iter().sum();
                    let sum_gx: f64 = gh.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] =
                            is * (gh[j] - sum_g / d as f64 - xhat[j] * sum_gx / d as f64);
                    }
                }
                if self.wants(*x) {
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.wants(*gamma) {
                    let shape = self.shape(*gamma).to_vec();
                    accumulate(grads, *gamma, Tensor::new(shape, dgamma)?);
                }
                if self.wants(*beta) {
                    let shape = self.shape(*beta).to_vec();
                    accumulate(grads, *beta, Tensor::new(shape, dbeta)?);
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    *d *= gelu(v).1;
                }
                accumulate(grads, *x, dx);
            }
            Op::Embedding { table, ids } => {
                let shape = self.shape(*table).to_vec();
                let h = shape[1];
                let mut dt = Tensor::zeros(&shape);
                for (i, &id) in ids.iter().enumerate() {
                    let src = &g.data()[i * h..(i + 1) * h];
                    for (d, v) in dt.data_mut()[id * h..(id + 1) * h].iter_mut().zip(src) {
                        *d += v;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::Select { x, pos } => {
                let shape = self.shape(*x).to_vec();
                let (n, l, h) = (shape[0], shape[1], shape[2]);
                let mut dx = Tensor::zeros(&shape);
                for b in 0..n {
                    let base = (b * l + pos) * h;
                    dx.data_mut()[base..base + h].copy_from_slice(&g.data()[b * h..(b + 1) * h]);
                }
                accumulate(grads, *x, dx);
            }
            Op::WeightedSum { x, w } => {
                let shape = self.shape(*x).to_vec();
                let s = g.item();
                let d = w.data().iter().map(|v| v * s).collect();
                accumulate(grads, *x, Tensor::new(shape, d)?);
            }
        }
        Ok(())
    }
}

/// `(batch, channels, spatial)` view of a tensor with channels on axis 1.
fn channel_layout(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("need rank >= 2, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn check_vec(op: &'static str, t: &Tensor, len: usize) -> Result<()> {
    if t.numel() != len {
        return Err(Error::shape(
            op,
            format!("parameter {:?} for {len} channels", t.shape()),
        ));
    }
    Ok(())
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v -= lse);
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = x.shape();
    let rank = in_shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.numel() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(x.data()[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permute preserves element count")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_all_ones() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = g.input(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.conv2d(x, w, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.input(t(&[2, 3, 4, 5], &data));
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        let w = g.input(k);
        let y = g.conv2d(x, w, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_channel_mismatch_names_dims() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.input(Tensor::zeros(&[1, 3, 2, 2]));
        let err = g.conv2d(x, w, (1, 1), (0, 0)).unwrap_err().to_string();
        assert!(err.contains("2") && err.contains("3"), "{err}");
    }

    #[test]
    fn batch_norm_constant_channel_gives_beta() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[4, 1, 3], 0.1));
        let gamma = g.input(Tensor::full(&[1], 1.0));
        let beta = g.input(Tensor::full(&[1], 3.0));
        let (y, _) = g.batch_norm_train(x, gamma, beta).unwrap();
        for v in g.value(y).data() {
            assert!((v - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_train_standardizes() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..5 * 2 * 6).map(|i| (i as f64 * 1.3).cos() * 4.0 + 2.0).collect();
        let x = g.input(t(&[5, 2, 6], &data));
        let gamma = g.input(Tensor::full(&[2], 1.0));
        let beta = g.input(Tensor::zeros(&[2]));
        let (y, _) = g.batch_norm_train(x, gamma, beta).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..5)
                .flat_map(|b| g.value(y).data()[(b * 2 + ch) * 6..(b * 2 + ch + 1) * 6].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_rejects_single_sample_in_train_mode() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 2, 3]));
        let gamma = g.input(Tensor::full(&[2], 1.0));
        let beta = g.input(Tensor::zeros(&[2]));
        assert!(matches!(
            g.batch_norm_train(x, gamma, beta),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(g.batch_norm_eval(x, gamma, beta, &[0.0; 2], &[1.0; 2]).is_ok());
    }

    #[test]
    fn prelu_branches() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[2.0, -2.0]));
        let a = g.input(Tensor::full(&[1], 0.25));
        let y = g.prelu(x, a).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, -0.5]);
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]));
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let w = g.input(eye);
        let b = g.input(Tensor::zeros(&[3]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let w0 = g.input(Tensor::zeros(&[3, 2]));
        let b2 = g.input(t(&[2], &[0.5, -1.5]));
        let y = g.linear(x, w0, Some(b2)).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.5, 0.5, -1.5]);
        let bad = g.input(Tensor::zeros(&[4, 2]));
        assert!(g.linear(x, bad, None).is_err());
    }

    #[test]
    fn stats_pool_examples() {
        let mut g = Graph::new();
        // D = 1: frames {0, 2}
        let x = g.input(t(&[1, 1, 2, 1], &[0.0, 2.0]));
        let y = g.stats_pool(x, true).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0]);

        let c = g.input(Tensor::full(&[1, 2, 5, 3], 1.5));
        let y = g.stats_pool(c, true).unwrap();
        let v = g.value(y).data();
        assert!(v[..6].iter().all(|&m| m == 1.5));
        assert!(v[6..].iter().all(|&s| s.abs() < 1e-5));

        let y = g.stats_pool(c, false).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 6]);
    }

    #[test]
    fn log_softmax_uniform_and_extreme() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 4], &[3.0, 3.0, 3.0, 3.0, 1000.0, 0.0, 0.0, 0.0]));
        let y = g.log_softmax(x).unwrap();
        let v = g.value(y).data();
        for &e in &v[..4] {
            assert!((e - (0.25f64).ln()).abs() < 1e-12);
        }
        assert!(v[4].abs() < 1e-12);
        assert!((v[5] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_and_label_check() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 4]));
        let l = g.cross_entropy(x, &[2]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            g.cross_entropy(x, &[4]),
            Err(Error::LabelOutOfRange { label: 4, n_classes: 4 })
        ));
        let sharp = g.input(t(&[1, 4], &[20.0, 0.0, 0.0, 0.0]));
        let l = g.cross_entropy(sharp, &[0]).unwrap();
        assert!(g.value(l).item() < 1e-3);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::new();
        let logits = [0.3, -1.2, 2.0, 0.1];
        let x = g.leaf(t(&[1, 4], &logits));
        let l = g.cross_entropy(x, &[1]).unwrap();
        let grads = g.backward(l).unwrap();
        let dx = grads.get(x).unwrap().data();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for (i, &v) in logits.iter().enumerate() {
            let want = v.exp() / z - if i == 1 { 1.0 } else { 0.0 };
            assert!((dx[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_keys() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2, 3], &[1.0, 2.0, 50.0, 0.5, -1.0, 9.0]));
        let y = g.masked_softmax(x, &[true, true, false]).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[2], 0.0);
        assert_eq!(v[5], 0.0);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
        assert!(g.masked_softmax(x, &[false, false, false]).is_err());
    }

    #[test]
    fn permute_round_trip() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let x = g.input(t(&[2, 3, 4], &data));
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 2, 3]);
        // y[k, i, j] = x[i, j, k]
        assert_eq!(g.value(y).data()[(3 * 2 + 1) * 3 + 2], data[(1 * 3 + 2) * 4 + 3]);
        let z = g.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(z).data(), &data[..]);
        assert!(g.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::full(&[2, 2], 0.5));
        let b = store.insert("b", Tensor::zeros(&[2]));
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 2], 1.0));
        let wn = g.param(&store, w, false);
        let bn = g.param(&store, b, true);
        let y = g.linear(x, wn, Some(bn)).unwrap();
        let l = g.weighted_sum(y, Tensor::full(&[1, 2], 1.0)).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(wn).is_none());
        let pg = g.param_grads(&grads);
        assert_eq!(pg.len(), 1);
        assert_eq!(pg[0].0, b);
        assert_eq!(pg[0].1.unwrap().data(), &[1.0, 1.0]);
    }
}
