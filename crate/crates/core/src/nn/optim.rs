//! SGD with classical momentum and bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const SGD_MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} parameters vs {b} gradients")));
    }
    Ok(())
}

/// `v ← μ·v + g; p ← p − lr·v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_len("sgd_step", params.len(), grads.len())?;
    check_len("sgd_step", params.len(), velocity.len())?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// One Adam update; `step` is the 1-based count including this update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
) -> Result<()> {
    check_len("adam_step", params.len(), grads.len())?;
    check_len("adam_step", params.len(), m.len())?;
    check_len("adam_step", params.len(), v.len())?;
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Per-parameter accumulators mirroring a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    /// Velocity (SGD) or first moment (Adam).
    pub first: Vec<Vec<f64>>,
    /// Second moment (Adam only; empty vectors for SGD).
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        let first = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        let second = store
            .iter()
            .map(|(_, _, t)| match kind {
                OptimizerKind::Adam => vec![0.0; t.numel()],
                OptimizerKind::SgdMomentum => Vec::new(),
            })
            .collect();
        OptimizerState {
            kind,
            step: 0,
            first,
            second,
        }
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn apply(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Option<&Tensor>)],
        lr_of: impl Fn(ParamId) -> f64,
    ) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::shape(
                "optimizer",
                format!("state for {} params, store has {}", self.first.len(), store.len()),
            ));
        }
        self.step += 1;
        for &(id, grad) in grads {
            let Some(grad) = grad else { continue };
            let lr = lr_of(id);
            let param = store.get_mut(id).data_mut();
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    sgd_step(param, grad.data(), &mut self.first[id.0], lr, SGD_MOMENTUM)?
                }
                OptimizerKind::Adam => adam_step(
                    param,
                    grad.data(),
                    &mut self.first[id.0],
                    &mut self.second[id.0],
                    self.step,
                    lr,
                )?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, SGD_MOMENTUM).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_two_steps_unrolled() {
        let g = [0.5, -3.0];
        let lr = 0.1;
        let mut p = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &g, &mut v, lr, SGD_MOMENTUM).unwrap();
        for i in 0..2 {
            assert!((p[i] - (-lr * g[i])).abs() < 1e-15);
        }
        let before = p.clone();
        sgd_step(&mut p, &g, &mut v, lr, SGD_MOMENTUM).unwrap();
        for i in 0..2 {
            assert!(((p[i] - before[i]) - (-lr * 1.9 * g[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        assert!(sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![3.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_step(&mut p, &[0.0], &mut m, &mut v, 1, 0.1).unwrap();
        assert_eq!(p, vec![3.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-3, 1.0, 1e4] {
            let mut p = vec![0.0, 0.0];
            let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
            adam_step(&mut p, &[scale, -scale], &mut m, &mut v, 1, 0.01).unwrap();
            assert!((p[0] + 0.01).abs() < 1e-6, "{scale}: {p:?}");
            assert!((p[1] - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_minimizes_square() {
        let mut x = vec![1.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for t in 1..=200 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut m, &mut v, t, 0.1).unwrap();
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }
}
