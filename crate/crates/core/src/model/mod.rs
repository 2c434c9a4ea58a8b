//! Toy multimodal network: patchifier, vision encoder, GELU projector and a
//! pre-norm causal decoder whose attention maps are kept for diagnostics.

mod config;
mod gradcheck;
mod layout;
mod network;
mod params;
mod patch;

pub use config::ModelConfig;
pub use gradcheck::{gradcheck_params, gradcheck_selected};
pub use layout::{mode_token, sequence_tokens, SequenceLayout};
pub use network::{
    assemble_sequence, encode_and_project, forward, forward_sample, greedy_decode, infer, ForwardOutput,
    ForwardVars, ProjectedImageEmbeddings, SampleForward, LN_EPS,
};
pub use params::{init_parameters, init_parameters_with_std, parameter_count, BoundParams, Params};
pub use patch::{patchify, patchify_raw, unpatchify, PatchGrid};
