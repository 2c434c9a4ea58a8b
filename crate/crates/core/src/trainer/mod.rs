//! Epoch planning over the two modes, AdamW with clipping and a warmup-cosine
//! schedule, the pretrain/SFT loop, and binary checkpoints.

mod checkpoint;
mod config;
mod optim;
mod plan;
mod run;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, MAGIC, VERSION,
};
pub use config::{Stage, TrainConfig};
pub use optim::{clip_global_norm, lr_schedule, warmup_steps, OptimizerState};
pub use plan::{build_epoch_plan, build_half_split_plan, EpochPlan, ModeCounts};
pub use run::{run_stage, train_step, write_metrics, StageOutput, StepMetrics};
