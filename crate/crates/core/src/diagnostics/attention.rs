use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardOutput;
use crate::tensor::Tensor;

/// Attention mass one query position assigns to each image patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionFlowMap {
    pub layer: usize,
    pub query: usize,
    /// `Some(h)` for a single head, `None` for the head average.
    pub head: Option<usize>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Row-major, patch reading order.
    pub grid: Vec<f64>,
    pub normalization: String,
}

impl AttentionFlowMap {
    pub fn mass(&self) -> f64 {
        self.grid.iter().sum()
    }

    pub fn cell(&self, r: usize, c: usize) -> f64 {
        self.grid[r * self.grid_cols + c]
    }
}

fn check(out: &ForwardOutput, query: usize, layer: usize) -> Result<(usize, usize)> {
    let layout = &out.layout;
    if layer >= out.attention.len() {
        return Err(Error::Usage(format!("layer {layer} out of range for {} layers", out.attention.len())));
    }
    if query >= layout.total_len {
        return Err(Error::Usage(format!("query position {query} beyond sequence length {}", layout.total_len)));
    }
    if layout.image.contains(&query) {
        return Err(Error::Usage(format!(
            "query position {query} lies in the image range {:?}",
            layout.image
        )));
    }
    let n = layout.image.len();
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Dimension(format!("{n} image positions do not form a square grid")));
    }
    Ok((side, side))
}

fn build(out: &ForwardOutput, query: usize, layer: usize, heads: &[&Tensor], head: Option<usize>) -> Result<AttentionFlowMap> {
    let (grid_rows, grid_cols) = check(out, query, layer)?;
    let image = out.layout.image.clone();
    let k = heads.len() as f64;
    let grid = image
        .map(|p| heads.iter().map(|a| a.row(query)[p]).sum::<f64>() / k)
        .collect();
    Ok(AttentionFlowMap {
        layer,
        query,
        head,
        grid_rows,
        grid_cols,
        grid,
        normalization: if head.is_some() { "single head".into() } else { "mean over heads".into() },
    })
}

/// Head-averaged attention from `query` onto the image positions of `layer`.
pub fn attention_flow(out: &ForwardOutput, query: usize, layer: usize) -> Result<AttentionFlowMap> {
    check(out, query, layer)?;
    let heads: Vec<&Tensor> = out.attention[layer].iter().collect();
    if heads.is_empty() {
        return Err(Error::Dimension(format!("layer {layer} has no heads")));
    }
    build(out, query, layer, &heads, None)
}

/// Single-head variant of [`attention_flow`].
pub fn attention_flow_head(out: &ForwardOutput, query: usize, layer: usize, head: usize) -> Result<AttentionFlowMap> {
    check(out, query, layer)?;
    let a = out.attention[layer]
        .get(head)
        .ok_or_else(|| Error::Usage(format!("head {head} out of range")))?;
    build(out, query, layer, &[a], Some(head))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapFiles {
    pub pgm: PathBuf,
    pub csv: PathBuf,
    pub json: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub layer: usize,
    pub query: usize,
    pub head: Option<usize>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub min: f64,
    pub max: f64,
    pub normalization: String,
}

/// Gray levels 0..=255 after per-map min-max scaling; a constant map is all 0.
pub fn gray_levels(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 0 })
        .collect()
}

/// Writes `<prefix>_L<layer>_q<query>.{pgm,csv,json}` (with `_h<head>`
/// appended for single-head maps).
pub fn write_heatmap(map: &AttentionFlowMap, prefix: &Path) -> Result<HeatmapFiles> {
    let stem = match map.head {
        None => format!("{}_L{}_q{}", prefix.display(), map.layer, map.query),
        Some(h) => format!("{}_L{}_q{}_h{h}", prefix.display(), map.layer, map.query),
    };
    let files = HeatmapFiles {
        pgm: PathBuf::from(format!("{stem}.pgm")),
        csv: PathBuf::from(format!("{stem}.csv")),
        json: PathBuf::from(format!("{stem}.json")),
    };
    let (rows, cols) = (map.grid_rows, map.grid_cols);

    let levels = gray_levels(&map.grid);
    let mut pgm = format!("P2\n{cols} {rows}\n255\n");
    let mut csv = String::new();
    for r in 0..rows {
        let px: Vec<String> = levels[r * cols..(r + 1) * cols].iter().map(u8::to_string).collect();
        pgm.push_str(&px.join(" "));
        pgm.push('\n');
        let vals: Vec<String> = map.grid[r * cols..(r + 1) * cols].iter().map(f64::to_string).collect();
        csv.push_str(&vals.join(","));
        csv.push('\n');
    }
    let meta = HeatmapMeta {
        layer: map.layer,
        query: map.query,
        head: map.head,
        grid_rows: rows,
        grid_cols: cols,
        min: map.grid.iter().copied().fold(f64::INFINITY, f64::min),
        max: map.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        normalization: format!("{}; gray levels min-max scaled per map", map.normalization),
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");

    for (path, body) in [(&files.pgm, pgm), (&files.csv, csv), (&files.json, json)] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

/// Parses a heatmap CSV back into its rows.
pub fn read_heatmap_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect()
        })
        .collect()
}

/// Validates that `path` would not resolve to a directory.
pub fn ensure_prefix_usable(prefix: &Path) -> Result<()> {
    if prefix.as_os_str().is_empty() || prefix.is_dir() {
        return Err(Error::Usage(format!("heatmap prefix {} must name a file stem", prefix.display())));
    }
    Ok(())
}
