use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mi::{embedding_mutual_information, MIEstimate};
use crate::data::MultimodalSample;
use crate::error::{Error, Result};
use crate::model::{greedy_decode, infer, ModelConfig, Params};
use crate::objective::{supervision_masks, LossVariant, ModeLabel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Fraction of hidden rows whose nearest target row is their own.
    pub accuracy: f64,
    /// Mean Euclidean distance between paired rows.
    pub mean_l2: f64,
    pub count: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest-neighbour matching of each hidden row against all target rows.
pub fn reconstruction_probe(targets: &Tensor, hidden: &Tensor) -> Result<ProbeReport> {
    if targets.shape() != hidden.shape() || targets.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "probe rows {:?} vs {:?}",
            targets.shape(),
            hidden.shape()
        )));
    }
    let n = targets.rows();
    if n == 0 {
        return Err(Error::Domain("probe needs at least one row".into()));
    }
    let mut correct = 0;
    let mut dist = 0.0;
    for i in 0..n {
        let h = hidden.row(i);
        let mut best = (0, f64::INFINITY);
        for j in 0..n {
            let d = sq_dist(h, targets.row(j));
            if d < best.1 {
                best = (j, d);
            }
        }
        if best.0 == i {
            correct += 1;
        }
        dist += sq_dist(h, targets.row(i)).sqrt();
    }
    Ok(ProbeReport {
        accuracy: correct as f64 / n as f64,
        mean_l2: dist / n as f64,
        count: n,
    })
}

/// Paired `(X_I, X_I^h)` rows of VDEP-mode forward passes over `samples`,
/// stacked in sample order.
pub fn alignment_rows(params: &Params, cfg: &ModelConfig, samples: &[MultimodalSample], offset: usize) -> Result<(Tensor, Tensor)> {
    let d = cfg.d_model;
    let mut targets = Vec::new();
    let mut hidden = Vec::new();
    for s in samples {
        let (out, emb) = infer(params, cfg, &s.image, &s.prompt, &s.response, ModeLabel::Vdep)?;
        for (pos, j) in supervision_masks(&out.layout, ModeLabel::Vdep, offset).image_pairs {
            targets.extend_from_slice(emb.matrix.row(j));
            hidden.extend_from_slice(out.hidden_states.row(pos));
        }
    }
    let rows = targets.len() / d;
    Ok((Tensor::new(vec![rows, d], targets)?, Tensor::new(vec![rows, d], hidden)?))
}

/// Rows per probe batch: four samples of sixteen patches, so chance is 1/64.
pub const PROBE_SAMPLES_PER_BATCH: usize = 4;

/// Probes consecutive groups of `per_batch` samples separately and pools
/// the results; a trailing partial group is probed on its own.
pub fn batched_probe(
    params: &Params,
    cfg: &ModelConfig,
    samples: &[MultimodalSample],
    offset: usize,
    per_batch: usize,
) -> Result<ProbeReport> {
    if per_batch == 0 || samples.is_empty() {
        return Err(Error::Domain("probe needs at least one sample per batch".into()));
    }
    let (mut correct, mut dist, mut count) = (0.0, 0.0, 0);
    for group in samples.chunks(per_batch) {
        let (t, h) = alignment_rows(params, cfg, group, offset)?;
        let r = reconstruction_probe(&t, &h)?;
        correct += r.accuracy * r.count as f64;
        dist += r.mean_l2 * r.count as f64;
        count += r.count;
    }
    Ok(ProbeReport {
        accuracy: correct / count as f64,
        mean_l2: dist / count as f64,
        count,
    })
}

/// Mean squared error between paired rows, optionally variant-transformed.
pub fn alignment_loss_value(targets: &Tensor, hidden: &Tensor, variant: LossVariant, eps: f64) -> f64 {
    let n = targets.numel().max(1) as f64;
    let m = sq_dist(targets.data(), hidden.data()) / n;
    variant.apply(m, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub snapshot: usize,
    pub l_image: f64,
    pub estimate: MIEstimate,
}

/// Quantized MI between targets and hidden states for each snapshot,
/// evaluated on one fixed batch.
pub fn mi_trajectory(
    snapshots: &[Params],
    cfg: &ModelConfig,
    batch: &[MultimodalSample],
    offset: usize,
    bins_per_dim: usize,
    dims_used: usize,
) -> Result<Vec<TrajectoryPoint>> {
    snapshots
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (t, h) = alignment_rows(p, cfg, batch, offset)?;
            Ok(TrajectoryPoint {
                snapshot: i,
                l_image: alignment_loss_value(&t, &h, LossVariant::L2, 0.0),
                estimate: embedding_mutual_information(&t, &h, bins_per_dim, dims_used)?,
            })
        })
        .collect()
}

pub fn write_trajectory_csv(points: &[TrajectoryPoint], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "snapshot,l_image,H_X,H_X_given_Y,I_bits").map_err(io)?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.snapshot, p.l_image, p.estimate.h_x, p.estimate.h_x_given_y, p.estimate.mutual_information
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Greedy captioning accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub count: usize,
    pub exact_match: f64,
    pub shape: f64,
    pub color: f64,
    pub row: f64,
    pub col: f64,
}

pub fn evaluate_captions(params: &Params, cfg: &ModelConfig, samples: &[MultimodalSample]) -> Result<CaptionReport> {
    if samples.is_empty() {
        return Err(Error::Domain("evaluation needs at least one sample".into()));
    }
    let mut hits = [0usize; 5];
    for s in samples {
        let out = greedy_decode(params, cfg, &s.image, &s.prompt, s.response.len())?;
        hits[0] += usize::from(out == s.response);
        // slots: shape, color, <at>, row, col
        for (k, pos) in [0, 1, 3, 4].into_iter().enumerate() {
            hits[k + 1] += usize::from(out.get(pos) == s.response.get(pos));
        }
    }
    let n = samples.len() as f64;
    Ok(CaptionReport {
        count: samples.len(),
        exact_match: hits[0] as f64 / n,
        shape: hits[1] as f64 / n,
        color: hits[2] as f64 / n,
        row: hits[3] as f64 / n,
        col: hits[4] as f64 / n,
    })
}
