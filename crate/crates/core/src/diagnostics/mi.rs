use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Plug-in entropy and mutual information of a joint count table, in bits.
/// Rows index `X`, columns index `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub h_x: f64,
    pub h_y: f64,
    pub h_x_given_y: f64,
    pub mutual_information: f64,
    pub rows: usize,
    pub cols: usize,
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

pub fn discrete_mutual_information(counts: &[Vec<u64>]) -> Result<MIEstimate> {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    if counts.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension("joint count table rows differ in length".into()));
    }
    let total: u64 = counts.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Domain("joint count table has no mass".into()));
    }
    let n = total as f64;
    let px: Vec<f64> = counts.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let py: Vec<f64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum::<u64>() as f64 / n).collect();
    let h_x = -px.iter().map(|&p| plogp(p)).sum::<f64>();
    let h_y = -py.iter().map(|&p| plogp(p)).sum::<f64>();
    let h_xy = -counts.iter().flatten().map(|&c| plogp(c as f64 / n)).sum::<f64>();
    let h_x_given_y = h_xy - h_y;
    Ok(MIEstimate {
        h_x,
        h_y,
        h_x_given_y,
        mutual_information: h_x - h_x_given_y,
        rows,
        cols,
    })
}

/// Joint count table of paired symbol streams.
pub fn joint_counts(x: &[usize], y: &[usize], x_symbols: usize, y_symbols: usize) -> Result<Vec<Vec<u64>>> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} x-symbols vs {} y-symbols", x.len(), y.len())));
    }
    let mut t = vec![vec![0u64; y_symbols]; x_symbols];
    for (&a, &b) in x.iter().zip(y) {
        if a >= x_symbols {
            return Err(Error::Index { index: a, extent: x_symbols });
        }
        if b >= y_symbols {
            return Err(Error::Index { index: b, extent: y_symbols });
        }
        t[a][b] += 1;
    }
    Ok(t)
}

/// Equal-width per-dimension bins fitted to a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub bins: usize,
}

impl Quantizer {
    /// Bins over the first `dims` columns of `reference` (rows are vectors).
    pub fn fit(reference: &Tensor, bins: usize, dims: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Domain("bins_per_dim must be at least 1".into()));
        }
        let (rows, width) = (reference.rows(), reference.last_dim());
        if rows == 0 {
            return Err(Error::Domain("cannot fit bins to an empty set".into()));
        }
        if dims == 0 || dims > width {
            return Err(Error::Dimension(format!("dims_used {dims} outside 1..={width}")));
        }
        let mut mins = vec![f64::INFINITY; dims];
        let mut maxs = vec![f64::NEG_INFINITY; dims];
        for r in 0..rows {
            for (k, &v) in reference.row(r)[..dims].iter().enumerate() {
                mins[k] = mins[k].min(v);
                maxs[k] = maxs[k].max(v);
            }
        }
        Ok(Self { mins, maxs, bins })
    }

    pub fn dims(&self) -> usize {
        self.mins.len()
    }

    /// Number of distinct symbols, `bins^dims`.
    pub fn alphabet(&self) -> usize {
        self.bins.pow(self.dims() as u32)
    }

    /// Bin of value `v` in dimension `k`; constant dimensions map to 0 and
    /// values outside the fitted range clamp to the end bins.
    pub fn bin(&self, k: usize, v: f64) -> usize {
        let (lo, hi) = (self.mins[k], self.maxs[k]);
        if hi <= lo {
            return 0;
        }
        let b = ((v - lo) / (hi - lo) * self.bins as f64).floor();
        (b.max(0.0) as usize).min(self.bins - 1)
    }

    /// Mixed-radix symbol per row, first dimension most significant.
    pub fn symbols(&self, vectors: &Tensor) -> Result<Vec<usize>> {
        if vectors.last_dim() < self.dims() {
            return Err(Error::Dimension(format!(
                "vectors of width {} cannot use {} dims",
                vectors.last_dim(),
                self.dims()
            )));
        }
        Ok((0..vectors.rows())
            .map(|r| {
                vectors.row(r)[..self.dims()]
                    .iter()
                    .enumerate()
                    .fold(0, |s, (k, &v)| s * self.bins + self.bin(k, v))
            })
            .collect())
    }
}

/// Symbols of `vectors` under bins fitted to `reference`.
pub fn quantize_embeddings(vectors: &Tensor, reference: &Tensor, bins_per_dim: usize, dims_used: usize) -> Result<Vec<usize>> {
    Quantizer::fit(reference, bins_per_dim, dims_used)?.symbols(vectors)
}

/// MI between quantized targets `X` and quantized hidden states `Y`, both
/// binned in the targets' frame.
pub fn embedding_mutual_information(targets: &Tensor, hidden: &Tensor, bins_per_dim: usize, dims_used: usize) -> Result<MIEstimate> {
    let q = Quantizer::fit(targets, bins_per_dim, dims_used)?;
    let x = q.symbols(targets)?;
    let y = q.symbols(hidden)?;
    discrete_mutual_information(&joint_counts(&x, &y, q.alphabet(), q.alphabet())?)
}
