use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{caption, render, Color, Shape, SyntheticScene, GRID};
use super::vocab::special;
use crate::error::{Error, Result};

fn default_size() -> usize {
    128
}
fn default_seed() -> u64 {
    7
}
fn default_side() -> usize {
    16
}
fn default_channels() -> usize {
    3
}
fn default_noise() -> f64 {
    0.05
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_side")]
    pub image_side: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_noise")]
    pub noise_amplitude: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            size: default_size(),
            master_seed: default_seed(),
            image_side: default_side(),
            channels: default_channels(),
            noise_amplitude: default_noise(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("data.size", "must be at least 1"));
        }
        if self.image_side == 0 || self.image_side % GRID != 0 {
            return Err(Error::config("data.image_side", format!("must be a positive multiple of {GRID}")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config("data.channels", "must be 1 or 3"));
        }
        if !(0.0..=0.5).contains(&self.noise_amplitude) {
            return Err(Error::config("data.noise_amplitude", "must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub index: usize,
    pub scene: SyntheticScene,
    /// `image_side × image_side × channels`, row-major, values in `[0, 1]`.
    pub image: Vec<f64>,
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
    pub seed: u64,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed derived from the master seed and the sample index.
pub fn sample_seed(master_seed: u64, index: usize) -> u64 {
    mix64(master_seed ^ mix64(index as u64))
}

fn build(spec: &DatasetSpec, index: usize, scene: SyntheticScene, seed: u64) -> MultimodalSample {
    MultimodalSample {
        index,
        scene,
        image: render(&scene, seed, spec.image_side, spec.channels, spec.noise_amplitude),
        prompt: vec![special::DESCRIBE],
        response: caption(&scene),
        seed,
    }
}

pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<MultimodalSample> {
    if index >= spec.size {
        return Err(Error::Index {
            index,
            extent: spec.size,
        });
    }
    let seed = sample_seed(spec.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = SyntheticScene::random(&mut rng);
    Ok(build(spec, index, scene, seed))
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<MultimodalSample>> {
    spec.validate()?;
    (0..spec.size).map(|i| generate_sample(spec, i)).collect()
}

/// On-disk form of a sample: one JSON object per line of a `.vdsl` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub index: usize,
    pub shape: Shape,
    pub color: Color,
    pub row: usize,
    pub col: usize,
    pub seed: u64,
    pub response_ids: Vec<usize>,
}

impl SampleRecord {
    pub fn scene(&self) -> SyntheticScene {
        SyntheticScene {
            shape: self.shape,
            color: self.color,
            row: self.row,
            col: self.col,
        }
    }
}

impl From<&MultimodalSample> for SampleRecord {
    fn from(s: &MultimodalSample) -> Self {
        Self {
            index: s.index,
            shape: s.scene.shape,
            color: s.scene.color,
            row: s.scene.row,
            col: s.scene.col,
            seed: s.seed,
            response_ids: s.response.clone(),
        }
    }
}

pub fn write_dataset(samples: &[MultimodalSample], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(&SampleRecord::from(s)).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses and validates the records of a `.vdsl` file without rendering.
pub fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let scene = rec.scene();
        if !scene.is_valid() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("cell ({}, {}) outside the {GRID}x{GRID} grid", rec.row, rec.col),
            });
        }
        if rec.response_ids != caption(&scene) {
            return Err(Error::Parse {
                line: line_no,
                message: "response_ids do not match the scene caption".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads a `.vdsl` file and re-renders every image from its scene and seed.
pub fn read_dataset(path: &Path, spec: &DatasetSpec) -> Result<Vec<MultimodalSample>> {
    Ok(read_records(path)?
        .into_iter()
        .map(|r| build(spec, r.index, r.scene(), r.seed))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_out_of_range() {
        let spec = DatasetSpec {
            size: 3,
            ..Default::default()
        };
        assert!(matches!(generate_sample(&spec, 3), Err(Error::Index { index: 3, extent: 3 })));
    }

    #[test]
    fn spec_validation_names_field() {
        let spec = DatasetSpec {
            image_side: 10,
            ..Default::default()
        };
        match spec.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "data.image_side"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
