use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{LossVariant, ObjectiveSettings};

/// Training stage of the two-stage recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Hybrid objective over the mixed VDEP/LLava plan.
    Pretrain,
    /// Text-only fine-tuning from pre-trained weights.
    Sft,
}

impl Stage {
    pub fn default_lr(self) -> f64 {
        match self {
            Stage::Pretrain => 1e-3,
            Stage::Sft => 2e-5,
        }
    }
}

fn alpha() -> f64 {
    0.001
}
fn data_ratio() -> f64 {
    1.0
}
fn loss_variant() -> LossVariant {
    LossVariant::L2
}
fn offset() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn batch_size() -> usize {
    8
}
fn steps() -> usize {
    300
}
fn warmup_fraction() -> f64 {
    0.03
}
fn stage() -> Stage {
    Stage::Pretrain
}
fn inverse_epsilon() -> f64 {
    1e-6
}
fn grad_clip() -> f64 {
    1.0
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "alpha")]
    pub alpha: f64,
    #[serde(default = "data_ratio")]
    pub data_ratio: f64,
    #[serde(default = "loss_variant")]
    pub loss_variant: LossVariant,
    #[serde(default = "offset")]
    pub offset: usize,
    #[serde(default = "yes")]
    pub detach_target: bool,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default = "steps")]
    pub steps: usize,
    /// Peak learning rate; the stage default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default = "warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "stage")]
    pub stage: Stage,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "inverse_epsilon")]
    pub inverse_epsilon: f64,
    /// Global gradient-norm ceiling.
    #[serde(default = "grad_clip")]
    pub grad_clip: f64,
    /// Cut every batch into a VDEP half and a LLava half instead of
    /// following the ratio-based plan.
    #[serde(default)]
    pub half_split: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: alpha(),
            data_ratio: data_ratio(),
            loss_variant: loss_variant(),
            offset: offset(),
            detach_target: true,
            batch_size: batch_size(),
            steps: steps(),
            lr: None,
            warmup_fraction: warmup_fraction(),
            seed: 0,
            stage: stage(),
            weight_decay: 0.0,
            inverse_epsilon: inverse_epsilon(),
            grad_clip: grad_clip(),
            half_split: false,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.stage.default_lr())
    }

    /// Data ratio actually used: SFT is text-only.
    pub fn effective_ratio(&self) -> f64 {
        match self.stage {
            Stage::Pretrain => self.data_ratio,
            Stage::Sft => 0.0,
        }
    }

    /// Copy with the stage-dependent defaults written out.
    pub fn resolved(&self) -> Self {
        Self {
            lr: Some(self.learning_rate()),
            ..self.clone()
        }
    }

    pub fn objective(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            alpha: self.alpha,
            variant: self.loss_variant,
            offset: self.offset,
            detach_target: self.detach_target,
            inverse_epsilon: self.inverse_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective().validate()?;
        if !(0.0..=1.0).contains(&self.data_ratio) {
            return Err(Error::config("train.data_ratio", "must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.half_split && self.batch_size < 2 {
            return Err(Error::config("train.batch_size", "half_split needs at least 2"));
        }
        if self.steps == 0 {
            return Err(Error::config("train.steps", "must be at least 1"));
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("train.lr", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("train.warmup_fraction", "must lie in [0, 1]"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be finite and >= 0"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be > 0"));
        }
        Ok(())
    }
}
