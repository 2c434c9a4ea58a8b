//! Quantized mutual information between image embeddings and hidden states,
//! the nearest-neighbour reconstruction probe, caption accuracy, and
//! attention-flow heatmaps.

mod attention;
mod mi;
mod probe;

pub use attention::{
    attention_flow, attention_flow_head, ensure_prefix_usable, gray_levels, read_heatmap_csv, write_heatmap,
    AttentionFlowMap, HeatmapFiles, HeatmapMeta,
};
pub use mi::{discrete_mutual_information, embedding_mutual_information, joint_counts, quantize_embeddings, MIEstimate, Quantizer};
pub use probe::{
    alignment_loss_value, alignment_rows, batched_probe, evaluate_captions, mi_trajectory, reconstruction_probe, write_trajectory_csv,
    CaptionReport, ProbeReport, TrajectoryPoint, PROBE_SAMPLES_PER_BATCH,
};
