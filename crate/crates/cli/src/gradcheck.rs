//! Finite-difference check of every differentiable layer used by the models.

use std::time::{Duration, Instant};

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emofuse_core::nn::{grad_check, Graph, NodeId, Tensor};
use emofuse_core::text::{encoder_layer, LayerNodes};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const SEEDS: u64 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub op: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub struct GradSuite {
    pub rows: Vec<GradRow>,
    pub elapsed: Duration,
}

impl GradSuite {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<28} {:>5} {:>14}  result\n", "op", "seeds", "max rel err");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>5} {:>14.3e}  {}\n",
                r.op,
                r.seeds,
                r.max_rel_error,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

type Build = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type Op = fn(&mut Graph, &[NodeId]) -> emofuse_core::Result<NodeId>;

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

/// Magnitudes in [0.2, 1.2] with random sign, away from the PReLU kink.
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
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

const ENC: (usize, usize, usize, usize) = (2, 3, 4, 8);
const ENC_MASK: [bool; 6] = [true, true, true, true, false, false];

fn encoder_inputs(r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (b, l, h, ff) = ENC;
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
}

fn cases() -> Vec<(&'static str, Build, Op)> {
    vec![
        (
            "conv2d",
            |r| vec![randn(&[2, 2, 5, 6], r), randn(&[3, 2, 3, 3], r)],
            |g, x| g.conv2d(x[0], x[1], (2, 2), (1, 1)),
        ),
        (
            "batch_norm",
            |r| vec![randn(&[3, 2, 2, 3], r), randn(&[2], r), randn(&[2], r)],
            |g, x| Ok(g.batch_norm_train(x[0], x[1], x[2])?.0),
        ),
        (
            "prelu",
            |r| {
                let x = away_from_zero(&[2, 3, 4], r);
                vec![x, Tensor::uniform(&[3], 0.05, 0.5, r)]
            },
            |g, x| g.prelu(x[0], x[1]),
        ),
        (
            "linear",
            |r| vec![randn(&[3, 4], r), randn(&[4, 5], r), randn(&[5], r)],
            |g, x| g.linear(x[0], x[1], Some(x[2])),
        ),
        ("stats_pool", |r| vec![randn(&[2, 2, 5, 3], r)], |g, x| g.stats_pool(x[0], true)),
        (
            "log_softmax+cross_entropy",
            |r| vec![randn(&[4, 4], r)],
            |g, x| g.cross_entropy(x[0], &[0, 3, 1, 1]),
        ),
        ("attention block", encoder_inputs, |g, x| {
            let (b, l, _, _) = ENC;
            encoder_layer(g, x[0], &LayerNodes::from_slice(&x[1..]), b, l, 2, &ENC_MASK)
        }),
    ]
}

pub fn run_suite() -> Result<GradSuite> {
    let start = Instant::now();
    let mut rows = Vec::new();
    for (op, build, f) in cases() {
        let mut worst = 0.0f64;
        for seed in 0..SEEDS {
            let inputs = build(&mut ChaCha8Rng::seed_from_u64(seed));
            let report = grad_check(f, &inputs, EPS)?;
            worst = worst.max(report.max_rel_error);
        }
        rows.push(GradRow {
            op,
            seeds: SEEDS,
            max_rel_error: worst,
            passed: worst < TOLERANCE,
        });
    }
    Ok(GradSuite {
        rows,
        elapsed: start.elapsed(),
    })
}
