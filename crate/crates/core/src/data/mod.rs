//! Synthetic image-caption corpus: 16-cell scenes holding one colored glyph,
//! captioned by a fixed five-token template.

mod dataset;
mod scene;
mod vocab;

pub use dataset::{
    generate_dataset, generate_sample, read_dataset, read_records, sample_seed, write_dataset, DatasetSpec,
    MultimodalSample, SampleRecord,
};
pub use scene::{all_scenes, caption, glyph_mask, parse_caption, render, Color, Shape, SyntheticScene, GRID};
pub use vocab::{special, Vocabulary};
