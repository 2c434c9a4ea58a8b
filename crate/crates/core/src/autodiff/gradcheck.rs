//! Central finite differences as an oracle for the analytic gradients.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst relative error between the analytic gradient of scalar `f` at `x`
/// and the central difference `(f(x+h) - f(x-h)) / 2h`, over every element.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = (0..x.numel()).map(|i| (0, i)).collect();
    finite_diff_gradcheck_at(
        |g, vars| f(g, vars[0]),
        std::slice::from_ref(x),
        &coords,
        step,
    )
}

/// Multi-input variant: `coords` lists `(input index, element index)` pairs to
/// probe. Every input is recorded as a gradient-tracking leaf.
pub fn finite_diff_gradcheck_at<F>(f: F, inputs: &[Tensor], coords: &[(usize, usize)], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t)).collect();
        let out = f(&mut g, &vars)?;
        g.scalar(out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut worst = 0.0f64;
    for &(ti, ei) in coords {
        let Some(t) = work.get(ti) else {
            return Err(Error::Index {
                index: ti,
                extent: inputs.len(),
            });
        };
        if ei >= t.numel() {
            return Err(Error::Index {
                index: ei,
                extent: t.numel(),
            });
        }
        let analytic = grads.get(vars[ti]).map_or(0.0, |gr| gr[ei]);
        let orig = work[ti].data()[ei];
        work[ti].data_mut()[ei] = orig + step;
        let plus = eval(&work)?;
        work[ti].data_mut()[ei] = orig - step;
        let minus = eval(&work)?;
        work[ti].data_mut()[ei] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}
