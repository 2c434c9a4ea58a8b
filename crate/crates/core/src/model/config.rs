use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};

fn d_model() -> usize {
    64
}
fn n_layers() -> usize {
    4
}
fn n_heads() -> usize {
    4
}
fn vocab_size() -> usize {
    Vocabulary::default().len()
}
fn image_side() -> usize {
    16
}
fn channels() -> usize {
    3
}
fn patch_size() -> usize {
    4
}
fn max_seq_len() -> usize {
    32
}
fn projector_hidden() -> usize {
    128
}
fn vision_layers() -> usize {
    1
}

/// Shape of the toy multimodal network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_model")]
    pub d_model: usize,
    #[serde(default = "n_layers")]
    pub n_layers: usize,
    #[serde(default = "n_heads")]
    pub n_heads: usize,
    #[serde(default = "vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "image_side")]
    pub image_side: usize,
    #[serde(default = "channels")]
    pub channels: usize,
    #[serde(default = "patch_size")]
    pub patch_size: usize,
    #[serde(default = "max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "projector_hidden")]
    pub projector_hidden: usize,
    #[serde(default = "vision_layers")]
    pub vision_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: d_model(),
            n_layers: n_layers(),
            n_heads: n_heads(),
            vocab_size: vocab_size(),
            image_side: image_side(),
            channels: channels(),
            patch_size: patch_size(),
            max_seq_len: max_seq_len(),
            projector_hidden: projector_hidden(),
            vision_layers: vision_layers(),
        }
    }
}

impl ModelConfig {
    /// A small configuration for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            projector_hidden: 24,
            ..Self::default()
        }
    }

    pub fn grid_side(&self) -> usize {
        self.image_side / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.d_model", self.d_model),
            ("model.n_layers", self.n_layers),
            ("model.n_heads", self.n_heads),
            ("model.image_side", self.image_side),
            ("model.channels", self.channels),
            ("model.patch_size", self.patch_size),
            ("model.max_seq_len", self.max_seq_len),
            ("model.projector_hidden", self.projector_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.image_side % self.patch_size != 0 {
            return Err(Error::config("model.patch_size", "must divide image_side"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config("model.n_heads", "must divide d_model"));
        }
        if self.vocab_size < Vocabulary::default().len() {
            return Err(Error::config(
                "model.vocab_size",
                format!("must cover the {} built-in tokens", Vocabulary::default().len()),
            ));
        }
        Ok(())
    }

    /// Field-by-field comparison; `Err` names the first mismatching field.
    pub fn ensure_matches(&self, other: &ModelConfig) -> Result<()> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object().expect("object"), b.as_object().expect("object"));
        for (k, v) in a {
            if b.get(k) != Some(v) {
                return Err(Error::config(
                    format!("model.{k}"),
                    format!("expected {v}, found {}", b.get(k).map_or("nothing".into(), |x| x.to_string())),
                ));
            }
        }
        Ok(())
    }
}
