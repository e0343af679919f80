//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead. Central differences
/// at step 1e-5 carry roundoff near 1e-11 times the loss.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of `op` against central differences with
/// step `eps`, for every coordinate of every input.
///
/// `op` receives one leaf node per entry of `inputs` and returns an output
/// node of any shape; non-scalar outputs are contracted with a fixed random
/// weight tensor so every output coordinate contributes.
pub fn grad_check<F>(op: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let projection = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = op(&mut g, &ids)?;
        let shape = g.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
        Tensor::uniform(&shape, -1.0, 1.0, &mut rng)
    };

    let eval = |values: &[Tensor], with_grad: bool| -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values
            .iter()
            .map(|t| if with_grad { g.leaf(t.clone()) } else { g.input(t.clone()) })
            .collect();
        let out = op(&mut g, &ids)?;
        let loss = g.weighted_sum(out, projection.clone())?;
        let value = g.value(loss).item();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(loss)?;
        Ok((value, ids.iter().map(|&i| grads.get(i).cloned()).collect()))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + eps;
            let (plus, _) = eval(&work, false)?;
            work[k].data_mut()[i] = orig - eps;
            let (minus, _) = eval(&work, false)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].as_ref().map_or(0.0, |t| t.data()[i]);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = err;
                report.worst_input = k;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
