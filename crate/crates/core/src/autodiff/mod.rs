//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every op applied during a forward pass; calling
//! [`Graph::backward`] once on a scalar produces [`Gradients`] for every
//! node that depends on a gradient-tracking leaf.

mod gradcheck;
mod graph;
mod kernels;

pub use gradcheck::{finite_diff_gradcheck, finite_diff_gradcheck_at, relative_error};
pub use graph::{Gradients, Graph, Var};

use crate::error::Result;

/// Mean token cross-entropy over rows where `mask` is set.
///
/// Returns the loss node and the number of enabled rows. With no enabled row
/// the loss is exactly zero.
pub fn cross_entropy_masked(g: &mut Graph, logits: Var, targets: &[usize], mask: &[bool]) -> Result<(Var, usize)> {
    let count = mask.iter().filter(|&&m| m).count();
    let scale = if count == 0 { 1.0 } else { 1.0 / count as f64 };
    Ok((g.cross_entropy_sum(logits, targets, mask, scale)?, count))
}

/// Mean squared difference over the elements of rows where `mask` is set.
pub fn masked_mean_squared_error(g: &mut Graph, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
    let count = mask.iter().filter(|&&m| m).count();
    let width = g.shape(pred).last().copied().unwrap_or(1);
    let elements = count * width;
    let scale = if elements == 0 { 1.0 } else { 1.0 / elements as f64 };
    g.squared_error_sum(pred, target, mask, scale)
}
