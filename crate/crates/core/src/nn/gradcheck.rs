//! Central finite differences over every parameter of a model.

use super::model::ModelParams;

/// Numerical gradient of `loss` at `params` by `(L(p + h) - L(p - h)) / 2h`,
/// flattened in the same order as [`super::Gradients::to_flat`].
pub fn central_difference<F>(params: &ModelParams, step: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&ModelParams) -> f64,
{
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.num_params());
    for k in 0..params.layers().len() {
        let n_weights = params.layers()[k].weight.as_slice().len();
        let n_bias = params.layers()[k].bias.len();
        for idx in 0..n_weights + n_bias {
            let original = slot(&mut probe, k, idx, n_weights);
            *slot_mut(&mut probe, k, idx, n_weights) = original + step;
            let up = loss(&probe);
            *slot_mut(&mut probe, k, idx, n_weights) = original - step;
            let down = loss(&probe);
            *slot_mut(&mut probe, k, idx, n_weights) = original;
            out.push((up - down) / (2.0 * step));
        }
    }
    out
}

fn slot(p: &mut ModelParams, k: usize, idx: usize, n_weights: usize) -> f64 {
    *slot_mut(p, k, idx, n_weights)
}

fn slot_mut(p: &mut ModelParams, k: usize, idx: usize, n_weights: usize) -> &mut f64 {
    let layer = &mut p.layers_mut()[k];
    if idx < n_weights {
        &mut layer.weight.as_mut_slice()[idx]
    } else {
        &mut layer.bias[idx - n_weights]
    }
}

/// Elementwise `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries that
/// are zero up to finite-difference noise from dominating.
pub fn relative_errors(analytic: &[f64], numeric: &[f64], floor: f64) -> Vec<f64> {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    relative_errors(analytic, numeric, floor)
        .into_iter()
        .fold(0.0, f64::max)
}
