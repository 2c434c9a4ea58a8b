use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::special;
use crate::error::{Error, Result};
use crate::objective::ModeLabel;

/// Where each segment of an assembled sequence lives.
///
/// `[<bos>, mode token, image patches.., prompt.., response.., <eos>]`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub total_len: usize,
    pub mode_index: usize,
    pub image: Range<usize>,
    pub prompt: Range<usize>,
    pub response: Range<usize>,
}

impl SequenceLayout {
    pub fn new(n_patches: usize, prompt_len: usize, response_len: usize) -> Self {
        let image = 2..2 + n_patches;
        let prompt = image.end..image.end + prompt_len;
        let response = prompt.end..prompt.end + response_len;
        Self {
            total_len: response.end + 1,
            mode_index: 1,
            image,
            prompt,
            response,
        }
    }

    pub fn eos_index(&self) -> usize {
        self.total_len - 1
    }

    pub fn is_text_position(&self, pos: usize) -> bool {
        pos < self.total_len && !self.image.contains(&pos)
    }
}

pub fn mode_token(mode: ModeLabel) -> usize {
    match mode {
        ModeLabel::Vdep => special::AUTO_IMAGE,
        ModeLabel::Llava => special::IMAGE,
    }
}

/// Token ids of the assembled sequence, with `<pad>` at image slots.
pub fn sequence_tokens(layout: &SequenceLayout, prompt: &[usize], response: &[usize], mode: ModeLabel) -> Vec<usize> {
    let mut ids = vec![special::PAD; layout.total_len];
    ids[0] = special::BOS;
    ids[layout.mode_index] = mode_token(mode);
    ids[layout.prompt.clone()].copy_from_slice(prompt);
    ids[layout.response.clone()].copy_from_slice(response);
    ids[layout.eos_index()] = special::EOS;
    ids
}

pub(crate) fn checked_layout(
    n_patches: usize,
    prompt_len: usize,
    response_len: usize,
    max_seq_len: usize,
) -> Result<SequenceLayout> {
    let layout = SequenceLayout::new(n_patches, prompt_len, response_len);
    if layout.total_len > max_seq_len {
        return Err(Error::Dimension(format!(
            "sequence of length {} exceeds max_seq_len {max_seq_len}",
            layout.total_len
        )));
    }
    Ok(layout)
}
