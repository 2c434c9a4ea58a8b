//! Hybrid objective: next-token cross-entropy for LLava-mode samples plus an
//! `alpha`-weighted regression of hidden states onto the projected image
//! embeddings for VDEP-mode samples.

use serde::{Deserialize, Serialize};

use crate::autodiff::{masked_mean_squared_error, Graph, Var};
use crate::data::special;
use crate::error::{Error, Result};
use crate::model::{sequence_tokens, SampleForward, SequenceLayout};

/// Which supervision a sample receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeLabel {
    /// Hidden states at image positions regress onto the projected image embeddings.
    Vdep,
    /// Standard next-token cross-entropy on the response.
    Llava,
}

/// Transform applied to the mean squared alignment error `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `m`
    L2,
    /// `1 / (m + eps)`
    InverseL2,
    /// `sigmoid(m)`
    SigmoidL2,
}

impl LossVariant {
    pub const ALL: [LossVariant; 3] = [LossVariant::InverseL2, LossVariant::SigmoidL2, LossVariant::L2];

    pub fn label(self) -> &'static str {
        match self {
            LossVariant::L2 => "L2",
            LossVariant::InverseL2 => "1/L2",
            LossVariant::SigmoidL2 => "Sigmoid(L2)",
        }
    }

    /// Scalar form of the variant, for reporting and property checks.
    pub fn apply(self, m: f64, eps: f64) -> f64 {
        match self {
            LossVariant::L2 => m,
            LossVariant::InverseL2 => 1.0 / (m + eps),
            LossVariant::SigmoidL2 => 1.0 / (1.0 + (-m).exp()),
        }
    }
}

/// Knobs of the hybrid objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub alpha: f64,
    pub variant: LossVariant,
    /// 1: the hidden state preceding patch `j` predicts patch `j`;
    /// 0: the hidden state at patch `j` reconstructs patch `j`.
    pub offset: usize,
    pub detach_target: bool,
    pub inverse_epsilon: f64,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            variant: LossVariant::L2,
            offset: 1,
            detach_target: true,
            inverse_epsilon: 1e-6,
        }
    }
}

impl ObjectiveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("train.alpha", "must be finite and >= 0"));
        }
        if self.offset > 1 {
            return Err(Error::config("train.offset", "must be 0 or 1"));
        }
        if !(self.inverse_epsilon > 0.0) {
            return Err(Error::config("train.inverse_epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// Per-sample supervision derived from the layout and the mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionMasks {
    /// Logit rows that contribute to the text loss.
    pub text_mask: Vec<bool>,
    /// `(hidden-state position, target patch index)` pairs.
    pub image_pairs: Vec<(usize, usize)>,
}

pub fn supervision_masks(layout: &SequenceLayout, mode: ModeLabel, offset: usize) -> SupervisionMasks {
    let mut text_mask = vec![false; layout.total_len];
    let mut image_pairs = Vec::new();
    match mode {
        ModeLabel::Llava => {
            // the logit at position t - 1 predicts the token at t
            for t in layout.response.clone() {
                text_mask[t - 1] = true;
            }
        }
        ModeLabel::Vdep => {
            let start = layout.image.start;
            for j in 0..layout.image.len() {
                image_pairs.push((start + j - offset.min(1), j));
            }
        }
    }
    SupervisionMasks { text_mask, image_pairs }
}

/// `targets[i]` is the token at position `i + 1`; the last row gets `<pad>`.
pub fn next_token_targets(tokens: &[usize]) -> Vec<usize> {
    let mut t: Vec<usize> = tokens.iter().skip(1).copied().collect();
    t.push(special::PAD);
    t
}

/// Variant-transformed mean squared error between paired rows.
pub fn image_alignment_loss(
    g: &mut Graph,
    hidden: Var,
    targets: Var,
    variant: LossVariant,
    inverse_epsilon: f64,
    detach_target: bool,
) -> Result<Var> {
    let targets = if detach_target { g.detach(targets) } else { targets };
    let rows = g.shape(hidden).first().copied().unwrap_or(0);
    let m = masked_mean_squared_error(g, hidden, targets, &vec![true; rows])?;
    match variant {
        LossVariant::L2 => Ok(m),
        LossVariant::InverseL2 => {
            let shifted = g.add_scalar(m, inverse_epsilon)?;
            g.recip(shifted)
        }
        LossVariant::SigmoidL2 => g.sigmoid(m),
    }
}

/// Scalar summary of one hybrid loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_text: f64,
    pub l_image: f64,
    pub total: f64,
    pub text_position_count: usize,
    pub image_position_count: usize,
    pub alpha_used: f64,
}

impl LossBreakdown {
    /// Combines the two terms as `l_text + alpha · l_image`.
    pub fn new(l_text: f64, l_image: f64, alpha: f64, text_position_count: usize, image_position_count: usize) -> Self {
        let total = if alpha == 0.0 { l_text } else { l_text + alpha * l_image };
        Self {
            l_text,
            l_image,
            total,
            text_position_count,
            image_position_count,
            alpha_used: alpha,
        }
    }
}

/// One sample's recorded forward pass together with its mode.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub forward: SampleForward,
    pub mode: ModeLabel,
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
}

/// Graph handles of a hybrid loss evaluation.
#[derive(Debug, Clone)]
pub struct HybridLoss {
    pub total: Var,
    pub l_text: Option<Var>,
    pub l_image: Option<Var>,
    pub breakdown: LossBreakdown,
}

/// `total = l_text + alpha · l_image`, each term a mean over its own mode's
/// supervised positions. A mode absent from the batch contributes zero.
/// With `alpha == 0` the image term is evaluated but kept off the gradient
/// path of `total`.
pub fn hybrid_loss(g: &mut Graph, batch: &[BatchItem], settings: &ObjectiveSettings) -> Result<HybridLoss> {
    settings.validate()?;

    let mut text_items = Vec::new();
    let mut hidden_rows = Vec::new();
    let mut target_rows = Vec::new();
    let mut text_count = 0;
    let mut image_count = 0;
    for item in batch {
        let layout = &item.forward.layout;
        let masks = supervision_masks(layout, item.mode, settings.offset);
        match item.mode {
            ModeLabel::Llava => {
                text_count += masks.text_mask.iter().filter(|&&m| m).count();
                let tokens = sequence_tokens(layout, &item.prompt, &item.response, item.mode);
                text_items.push((item.forward.fwd.logits, next_token_targets(&tokens), masks.text_mask));
            }
            ModeLabel::Vdep => {
                if masks.image_pairs.is_empty() {
                    continue;
                }
                image_count += masks.image_pairs.len();
                let (pos, idx): (Vec<usize>, Vec<usize>) = masks.image_pairs.into_iter().unzip();
                hidden_rows.push(g.gather_rows(item.forward.fwd.hidden, &pos)?);
                target_rows.push(g.gather_rows(item.forward.image, &idx)?);
            }
        }
    }

    let l_text = if text_count > 0 {
        let scale = 1.0 / text_count as f64;
        let mut acc: Option<Var> = None;
        for (logits, targets, mask) in text_items {
            let term = g.cross_entropy_sum(logits, &targets, &mask, scale)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        acc
    } else {
        None
    };

    let l_image = if image_count > 0 {
        let h = g.concat_rows(&hidden_rows)?;
        let t = g.concat_rows(&target_rows)?;
        Some(image_alignment_loss(
            g,
            h,
            t,
            settings.variant,
            settings.inverse_epsilon,
            settings.detach_target,
        )?)
    } else {
        None
    };

    let alpha = settings.alpha;
    let total = match (l_text, l_image) {
        (Some(t), Some(i)) if alpha != 0.0 => {
            let w = g.scale(i, alpha)?;
            g.add(t, w)?
        }
        (Some(t), _) => t,
        (None, Some(i)) if alpha != 0.0 => g.scale(i, alpha)?,
        _ => g.constant(&crate::Tensor::scalar(0.0)),
    };

    let value = |g: &Graph, v: Option<Var>| v.map_or(Ok(0.0), |v| g.scalar(v));
    let breakdown = LossBreakdown::new(value(g, l_text)?, value(g, l_image)?, alpha, text_count, image_count);
    debug_assert_eq!(breakdown.total.to_bits(), g.scalar(total)?.to_bits());
    Ok(HybridLoss {
        total,
        l_text,
        l_image,
        breakdown,
    })
}
