use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::Params;

/// AdamW moments and constants.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &Params, weight_decay: f64) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.numel()])).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One bias-corrected update. `grads` maps parameter names to gradients;
    /// a missing entry is a zero gradient.
    pub fn update(&mut self, params: &mut Params, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let m = self
                .first
                .get_mut(name)
                .ok_or_else(|| Error::config(name.clone(), "parameter missing from optimizer state"))?;
            let v = self.second.get_mut(name).expect("moments are created together");
            let g = grads.get(name);
            if let Some(g) = g {
                if g.len() != m.len() {
                    return Err(Error::Dimension(format!("gradient for {name} has {} values, expected {}", g.len(), m.len())));
                }
            }
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                if self.weight_decay != 0.0 {
                    *w -= lr * self.weight_decay * *w;
                }
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Number of warmup steps for a run of `total` steps.
pub fn warmup_steps(total: usize, warmup_fraction: f64) -> usize {
    (warmup_fraction * total as f64).round() as usize
}

/// Linear warmup to `lr`, then cosine decay to zero at `total`.
pub fn lr_schedule(step: usize, total: usize, lr: f64, warmup_fraction: f64) -> f64 {
    if step >= total {
        return 0.0;
    }
    let warm = warmup_steps(total, warmup_fraction);
    if step < warm {
        return lr * step as f64 / warm as f64;
    }
    let progress = (step - warm) as f64 / (total - warm) as f64;
    0.5 * lr * (1.0 + (PI * progress).cos())
}
