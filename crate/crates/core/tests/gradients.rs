//! Finite-difference checks for every differentiable operation.

use emofuse_core::nn::{grad_check, Graph, NodeId, Tensor};
use emofuse_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const SEEDS: u64 = 10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

/// Entries with magnitude in [0.2, 1.2] and random sign, away from the PReLU kink.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.2..1.2);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check<F>(name: &str, tol: f64, build: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, op: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Copy,
{
    for seed in 0..SEEDS {
        let inputs = build(&mut rng(seed));
        let report = grad_check(op, &inputs, EPS).unwrap();
        assert!(
            report.max_rel_error < tol,
            "{name} seed {seed}: {report:?}"
        );
    }
}

#[test]
fn linear() {
    check(
        "linear",
        1e-6,
        |r| vec![randn(&[3, 4], r), randn(&[4, 5], r), randn(&[5], r)],
        |g, x| g.linear(x[0], x[1], Some(x[2])),
    );
}

#[test]
fn conv2d_strided_padded() {
    check(
        "conv2d",
        1e-4,
        |r| vec![randn(&[2, 2, 5, 6], r), randn(&[3, 2, 3, 3], r)],
        |g, x| g.conv2d(x[0], x[1], (2, 2), (1, 1)),
    );
    check(
        "conv2d 1x1",
        1e-4,
        |r| vec![randn(&[2, 3, 3, 4], r), randn(&[2, 3, 1, 1], r)],
        |g, x| g.conv2d(x[0], x[1], (1, 1), (0, 0)),
    );
}

#[test]
fn batch_norm_train_and_eval() {
    check(
        "batch_norm train",
        1e-4,
        |r| vec![randn(&[3, 2, 2, 3], r), randn(&[2], r), randn(&[2], r)],
        |g, x| Ok(g.batch_norm_train(x[0], x[1], x[2])?.0),
    );
    check(
        "batch_norm eval",
        1e-4,
        |r| vec![randn(&[2, 3, 4], r), randn(&[3], r), randn(&[3], r)],
        |g, x| g.batch_norm_eval(x[0], x[1], x[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0]),
    );
}

#[test]
fn prelu_with_learnable_slope() {
    check(
        "prelu",
        1e-6,
        |r| {
            let slopes = Tensor::uniform(&[3], 0.05, 0.5, r);
            vec![away_from_zero(&[2, 3, 4], r), slopes]
        },
        |g, x| g.prelu(x[0], x[1]),
    );
}

#[test]
fn stats_pool() {
    check(
        "stats_pool",
        1e-4,
        |r| vec![randn(&[2, 2, 5, 3], r)],
        |g, x| g.stats_pool(x[0], true),
    );
    check(
        "mean pool",
        1e-4,
        |r| vec![randn(&[2, 2, 5, 3], r)],
        |g, x| g.stats_pool(x[0], false),
    );
}

#[test]
fn log_softmax_cross_entropy() {
    check(
        "log_softmax + nll",
        1e-4,
        |r| vec![randn(&[4, 4], r)],
        |g, x| g.cross_entropy(x[0], &[0, 3, 1, 1]),
    );
    check(
        "log_softmax",
        1e-4,
        |r| vec![randn(&[3, 5], r)],
        |g, x| g.log_softmax(x[0]),
    );
}

#[test]
fn attention_primitives() {
    check(
        "bmm",
        1e-4,
        |r| vec![randn(&[2, 3, 4], r), randn(&[2, 4, 5], r)],
        |g, x| g.bmm(x[0], x[1], false),
    );
    check(
        "bmm trans_b",
        1e-4,
        |r| vec![randn(&[2, 3, 4], r), randn(&[2, 5, 4], r)],
        |g, x| g.bmm(x[0], x[1], true),
    );
    check(
        "masked_softmax",
        1e-4,
        |r| vec![randn(&[2, 3, 4], r)],
        |g, x| g.masked_softmax(x[0], &[true, true, false, true, true, false, false, true]),
    );
    check(
        "layer_norm",
        1e-4,
        |r| vec![randn(&[3, 6], r), randn(&[6], r), randn(&[6], r)],
        |g, x| g.layer_norm(x[0], x[1], x[2]),
    );
    check("gelu", 1e-4, |r| vec![randn(&[10], r)], |g, x| Ok(g.gelu(x[0])));
    check(
        "permute",
        1e-6,
        |r| vec![randn(&[2, 3, 4], r)],
        |g, x| g.permute(x[0], &[1, 0, 2]),
    );
    check(
        "embedding + select",
        1e-6,
        |r| vec![randn(&[5, 3], r)],
        |g, x| {
            let e = g.embedding(x[0], &[4, 0, 4, 2, 1, 1])?;
            let e = g.reshape(e, &[2, 3, 3])?;
            g.select(e, 1)
        },
    );
}

#[test]
fn encoder_layer_attention_block() {
    use emofuse_core::text::{encoder_layer, LayerNodes};
    let (b, l, h, ff) = (2, 3, 4, 8);
    let mask = [true, true, true, true, false, false];
    check(
        "encoder layer",
        1e-4,
        |r| {
            let mut v = vec![randn(&[b * l, h], r)];
            for _ in 0..4 {
                v.push(Tensor::randn(&[h, h], 0.5, r));
                v.push(Tensor::randn(&[h], 0.1, r));
            }
            v.push(Tensor::uniform(&[h], 0.5, 1.5, r));
            v.push(Tensor::randn(&[h], 0.1, r));
            v.push(Tensor::randn(&[h, ff], 0.5, r));
            v.push(Tensor::randn(&[ff], 0.1, r));
            v.push(Tensor::randn(&[ff, h], 0.5, r));
            v.push(Tensor::randn(&[h], 0.1, r));
            v.push(Tensor::uniform(&[h], 0.5, 1.5, r));
            v.push(Tensor::randn(&[h], 0.1, r));
            v
        },
        |g, x| encoder_layer(g, x[0], &LayerNodes::from_slice(&x[1..]), b, l, 2, &mask),
    );
}
