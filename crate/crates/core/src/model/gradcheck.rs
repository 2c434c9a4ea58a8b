use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_gradcheck_at, Graph, Var};
use crate::error::Result;

use super::params::{BoundParams, Params};

/// Finite-difference check of a scalar function of all model parameters.
///
/// Probes up to `per_tensor` randomly chosen elements of every parameter
/// tensor (all of them when `None`) and returns the worst relative error.
pub fn gradcheck_params<F>(params: &Params, per_tensor: Option<usize>, seed: u64, step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    gradcheck_selected(params, |_| true, per_tensor, seed, step, f)
}

/// Like [`gradcheck_params`], probing only tensors whose name passes `select`.
pub fn gradcheck_selected<S, F>(params: &Params, select: S, per_tensor: Option<usize>, seed: u64, step: f64, f: F) -> Result<f64>
where
    S: Fn(&str) -> bool,
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.names().cloned().collect();
    let inputs: Vec<_> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut coords = Vec::new();
    for (ti, t) in inputs.iter().enumerate() {
        if !select(&names[ti]) {
            continue;
        }
        let n = t.numel();
        match per_tensor {
            Some(k) if k < n => coords.extend(sample(&mut rng, n, k).into_iter().map(|e| (ti, e))),
            _ => coords.extend((0..n).map(|e| (ti, e))),
        }
    }
    finite_diff_gradcheck_at(
        |g, vars| {
            let bp = BoundParams::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            f(g, &bp)
        },
        &inputs,
        &coords,
        step,
    )
}
