//! Central finite-difference check of [`backward`](crate::model::backward).
//!
//! The numerical side only ever calls [`forward`](crate::model::forward), so
//! it shares no code with the reverse pass it verifies.

use crate::graph::TurnGraph;
use crate::model::{forward, forward_with_inputs, loss_and_gradients, ModelError, ModelParameters};

pub const DEFAULT_EPS: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn loss_at(params: &ModelParameters, g: &TurnGraph, gold: usize) -> Result<f64, ModelError> {
    Ok(forward(params, g)?.loss(gold))
}

/// Compares every parameter gradient against `(L(θ+ε) - L(θ-ε)) / 2ε`.
pub fn check_parameters(
    params: &ModelParameters,
    g: &TurnGraph,
    gold: usize,
    eps: f64,
) -> Result<GradCheckReport, ModelError> {
    let analytic = loss_and_gradients(params, g, gold)?.params;
    let manifest = params.manifest();
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (t, spec) in manifest.iter().enumerate() {
        let len = analytic.tensors()[t].len();
        for i in 0..len {
            let orig = work.tensors()[t][i];
            work.tensors_mut()[t][i] = orig + eps;
            let plus = loss_at(&work, g, gold)?;
            work.tensors_mut()[t][i] = orig - eps;
            let minus = loss_at(&work, g, gold)?;
            work.tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.tensors()[t][i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_tensor.is_empty() {
                report.max_rel_error = err;
                report.worst_tensor = spec.name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Same check for the gradient with respect to node input features;
/// returns the largest relative error.
pub fn check_inputs(
    params: &ModelParameters,
    g: &TurnGraph,
    gold: usize,
    eps: f64,
) -> Result<f64, ModelError> {
    let analytic = loss_and_gradients(params, g, gold)?.inputs;
    let base: Vec<Vec<f64>> = (0..g.n_nodes)
        .map(|i| g.node(i).iter().map(|&v| v as f64).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for node in 0..g.n_nodes {
        for col in 0..g.feature_dim {
            let eval = |delta: f64| -> Result<f64, ModelError> {
                let mut x = base.clone();
                x[node][col] += delta;
                Ok(forward_with_inputs(params, g, x)?.loss(gold))
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[node][col], numeric));
        }
    }
    Ok(worst)
}
