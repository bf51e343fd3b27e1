//! Central finite-difference check of graph gradients.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` for
/// each input; 0 when both gradients vanish.
pub fn relative_errors<F>(inputs: &[Tensor], f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &ids)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    g.backward(out)?;

    let mut errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let analytic = g.tensor_with_grad(*id).grad().expect("grad attached").to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            *n = (up - down) / (2.0 * FD_STEP);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric));
        errors.push(if scale == 0.0 { 0.0 } else { diff / scale });
    }
    Ok(errors)
}

/// Largest per-input relative error.
pub fn max_relative_error<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    Ok(relative_errors(inputs, f)?.into_iter().fold(0.0, f64::max))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
