use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::ModeLabel;

/// Number of entries per mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub vdep: usize,
    pub llava: usize,
}

impl ModeCounts {
    pub fn of<'a>(entries: impl IntoIterator<Item = &'a (usize, ModeLabel)>) -> Self {
        let mut c = Self::default();
        for (_, mode) in entries {
            match mode {
                ModeLabel::Vdep => c.vdep += 1,
                ModeLabel::Llava => c.llava += 1,
            }
        }
        c
    }
}

/// One epoch's ordered `(sample index, mode)` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub entries: Vec<(usize, ModeLabel)>,
}

impl EpochPlan {
    pub fn counts(&self) -> ModeCounts {
        ModeCounts::of(&self.entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Every index once in LLava mode plus `round(r·n)` distinct indices in VDEP
/// mode, shuffled.
pub fn build_epoch_plan<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<EpochPlan> {
    if n == 0 {
        return Err(Error::config("data.size", "epoch plan needs at least one sample"));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config("train.data_ratio", "must lie in [0, 1]"));
    }
    let vdep = (ratio * n as f64).round() as usize;
    let mut entries: Vec<(usize, ModeLabel)> = (0..n).map(|i| (i, ModeLabel::Llava)).collect();
    if vdep > 0 {
        entries.extend(sample(rng, n, vdep).into_iter().map(|i| (i, ModeLabel::Vdep)));
    }
    entries.shuffle(rng);
    Ok(EpochPlan { entries })
}

/// Each index appears once; every consecutive batch of `batch_size` entries
/// has a randomly chosen half (rounded down) in VDEP mode.
pub fn build_half_split_plan<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<EpochPlan> {
    if n == 0 {
        return Err(Error::config("data.size", "epoch plan needs at least one sample"));
    }
    if batch_size == 0 {
        return Err(Error::config("train.batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut entries = Vec::with_capacity(n);
    for chunk in order.chunks(batch_size) {
        let chosen = sample(rng, chunk.len(), chunk.len() / 2);
        let mut modes = vec![ModeLabel::Llava; chunk.len()];
        for k in chosen {
            modes[k] = ModeLabel::Vdep;
        }
        entries.extend(chunk.iter().copied().zip(modes));
    }
    Ok(EpochPlan { entries })
}
