//! Finite-difference gradient suites over every graph op and over the
//! end-to-end hybrid loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_gradcheck_at, masked_mean_squared_error, Graph, Var};
use crate::data::{generate_sample, DatasetSpec, MultimodalSample};
use crate::error::Result;
use crate::model::{forward_sample, gradcheck_params, gradcheck_selected, init_parameters_with_std, BoundParams, ModelConfig};
use crate::objective::{hybrid_loss, BatchItem, LossVariant, ModeLabel, ObjectiveSettings};
use crate::tensor::Tensor;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng, shift: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); shift + 0.5 * z }).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

type OpFn = fn(&mut Graph, &[Var]) -> Result<Var>;

fn ops() -> Vec<(&'static str, Vec<Vec<usize>>, f64, OpFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], 0.0, |g, v| g.matmul(v[0], v[1])),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], 0.0, |g, v| g.matmul_nt(v[0], v[1])),
        ("add", vec![vec![3, 4], vec![3, 4]], 0.0, |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], 0.0, |g, v| g.sub(v[0], v[1])),
        ("add_bias", vec![vec![3, 4], vec![4]], 0.0, |g, v| g.add_bias(v[0], v[1])),
        ("scale", vec![vec![3, 4]], 0.0, |g, v| g.scale(v[0], -1.7)),
        ("add_scalar", vec![vec![3, 4]], 0.0, |g, v| g.add_scalar(v[0], 0.3)),
        ("gelu", vec![vec![3, 4]], 0.0, |g, v| g.gelu(v[0])),
        ("sigmoid", vec![vec![3, 4]], 0.0, |g, v| g.sigmoid(v[0])),
        ("recip", vec![vec![3, 4]], 2.0, |g, v| g.recip(v[0])),
        ("softmax_lastdim", vec![vec![3, 4]], 0.0, |g, v| g.softmax_lastdim(v[0])),
        ("causal_softmax", vec![vec![4, 4]], 0.0, |g, v| g.causal_softmax(v[0])),
        ("layer_norm", vec![vec![3, 4], vec![4], vec![4]], 0.0, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ("embedding_lookup", vec![vec![5, 4]], 0.0, |g, v| g.embedding_lookup(v[0], &[1, 3, 1, 4])),
        ("gather_rows", vec![vec![5, 4]], 0.0, |g, v| g.gather_rows(v[0], &[4, 0, 0])),
        ("concat_rows", vec![vec![2, 4], vec![3, 4]], 0.0, |g, v| g.concat_rows(&[v[1], v[0]])),
        ("slice_cols", vec![vec![3, 6]], 0.0, |g, v| g.slice_cols(v[0], 1, 3)),
        ("concat_cols", vec![vec![3, 2], vec![3, 3]], 0.0, |g, v| g.concat_cols(&[v[1], v[0]])),
        ("cross_entropy_sum", vec![vec![4, 5]], 0.0, |g, v| {
            g.cross_entropy_sum(v[0], &[0, 4, 2, 1], &[true, false, true, true], 0.5)
        }),
        ("squared_error_sum", vec![vec![3, 4], vec![3, 4]], 0.0, |g, v| {
            g.squared_error_sum(v[0], v[1], &[true, false, true], 0.25)
        }),
        ("sum", vec![vec![3, 4]], 0.0, |g, v| g.sum(v[0])),
        ("composite", vec![vec![3, 4], vec![4, 4], vec![4], vec![4], vec![5, 4]], 0.0, composite),
    ]
}

fn composite(g: &mut Graph, v: &[Var]) -> Result<Var> {
    let h = g.matmul(v[0], v[1])?;
    let h = g.layer_norm(h, v[2], v[3], 1e-5)?;
    let h = g.gelu(h)?;
    let e = g.embedding_lookup(v[4], &[1, 3, 1])?;
    let h = g.add(h, e)?;
    let s = g.matmul_nt(h, e)?;
    let p = g.causal_softmax(s)?;
    let a = g.matmul(p, h)?;
    let q = g.softmax_lastdim(a)?;
    let target = g.constant(&Tensor::new(vec![3, 4], vec![0.2; 12])?);
    let mse = masked_mean_squared_error(g, q, target, &[true, false, true])?;
    let ce = g.cross_entropy_sum(a, &[0, 2, 3], &[true, true, false], 0.5)?;
    let sig = g.sigmoid(mse)?;
    let inv = g.add_scalar(ce, 1.0)?;
    let inv = g.recip(inv)?;
    let tot = g.add(sig, inv)?;
    g.sub(tot, ce)
}

/// Gradchecks every differentiable graph op on random inputs. Non-scalar op
/// outputs are read out through a squared error against a fixed random
/// target so no gradient is structurally zero.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ops()
        .into_iter()
        .map(|(name, shapes, shift, op)| {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| normal(s, &mut rng, shift)).collect();
            let coords: Vec<(usize, usize)> = inputs
                .iter()
                .enumerate()
                .flat_map(|(ti, t)| (0..t.numel()).map(move |e| (ti, e)))
                .collect();
            let probe = {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t)).collect();
                let out = op(&mut g, &vars)?;
                normal(&g.shape(out).to_vec(), &mut rng, 0.0)
            };
            let err = finite_diff_gradcheck_at(
                |g, v| {
                    let out = op(g, v)?;
                    if g.shape(out).iter().product::<usize>() == 1 {
                        return Ok(out);
                    }
                    let t = g.constant(&probe);
                    let rows = probe.rows();
                    g.squared_error_sum(out, t, &vec![true; rows], 1.0)
                },
                &inputs,
                &coords,
                GRADCHECK_STEP,
            )?;
            Ok(CheckResult {
                name: name.to_string(),
                max_relative_error: err,
            })
        })
        .collect()
}

fn hybrid_total(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    data: &[MultimodalSample],
    settings: &ObjectiveSettings,
) -> Result<Var> {
    let modes = [ModeLabel::Llava, ModeLabel::Vdep];
    let items = data
        .iter()
        .zip(modes.iter().cycle())
        .map(|(s, &mode)| {
            Ok(BatchItem {
                forward: forward_sample(g, p, cfg, &s.image, &s.prompt, &s.response, mode)?,
                mode,
                prompt: s.prompt.clone(),
                response: s.response.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hybrid_loss(g, &items, settings)?.total)
}

/// Gradchecks the full hybrid loss of a two-sample batch (one sample per
/// mode) for every seed, loss variant and offset.
///
/// With a live target every parameter tensor is probed. With a detached
/// target the analytic gradient deliberately ignores the target's dependence
/// on the encoder, so only decoder-side tensors are probed.
pub fn hybrid_suite(cfg: &ModelConfig, seeds: u64, per_tensor: Option<usize>) -> Result<Vec<CheckResult>> {
    let spec = DatasetSpec::default();
    let mut out = Vec::new();
    for seed in 0..seeds {
        let params = init_parameters_with_std(cfg, 100 + seed, 0.25);
        let data = [
            generate_sample(&spec, 2 * seed as usize)?,
            generate_sample(&spec, 2 * seed as usize + 1)?,
        ];
        for variant in LossVariant::ALL {
            for offset in [0, 1] {
                for detach_target in [false, true] {
                    let settings = ObjectiveSettings {
                        alpha: 0.5,
                        variant,
                        offset,
                        detach_target,
                        ..Default::default()
                    };
                    let f = |g: &mut Graph, p: &BoundParams| hybrid_total(g, p, cfg, &data, &settings);
                    let err = if detach_target {
                        let decoder = |n: &str| n.starts_with("decoder.") || n.starts_with("lm_head.");
                        gradcheck_selected(&params, decoder, per_tensor, seed, GRADCHECK_STEP, f)?
                    } else {
                        gradcheck_params(&params, per_tensor, seed, GRADCHECK_STEP, f)?
                    };
                    out.push(CheckResult {
                        name: format!(
                            "hybrid seed={seed} loss={} offset={offset} detach={detach_target}",
                            variant.label()
                        ),
                        max_relative_error: err,
                    });
                }
            }
        }
    }
    Ok(out)
}
