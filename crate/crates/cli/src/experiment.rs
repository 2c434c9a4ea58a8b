//! Training and evaluation helpers shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use vdep::data::{generate_dataset, DatasetSpec, MultimodalSample};
use vdep::diagnostics::{batched_probe, evaluate_captions, CaptionReport, ProbeReport, PROBE_SAMPLES_PER_BATCH};
use vdep::model::{ModelConfig, Params};
use vdep::objective::LossVariant;
use vdep::trainer::{run_stage, save_checkpoint, write_metrics, StageOutput, StepMetrics, TrainConfig};
use vdep::Error;

use crate::config::RunConfigFile;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

/// Held-out evaluation set: 64 samples from a master seed disjoint from the
/// training stream.
pub fn heldout_spec(data: &DatasetSpec) -> DatasetSpec {
    DatasetSpec {
        size: 64,
        master_seed: data.master_seed.wrapping_add(1000),
        ..data.clone()
    }
}

/// Dataset spec for re-rendering a `.vdsl` file under a given model.
pub fn render_spec(model: &ModelConfig, size: usize) -> DatasetSpec {
    DatasetSpec {
        size,
        image_side: model.image_side,
        channels: model.channels,
        ..Default::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub captions: CaptionReport,
    pub probe: ProbeReport,
    /// Probe accuracy of a random matching, `1 / rows per batch`.
    pub probe_chance: f64,
}

pub fn evaluate(params: &Params, model: &ModelConfig, samples: &[MultimodalSample], offset: usize) -> Result<EvalReport> {
    let per_batch = PROBE_SAMPLES_PER_BATCH.min(samples.len());
    Ok(EvalReport {
        captions: evaluate_captions(params, model, samples)?,
        probe: batched_probe(params, model, samples, offset, PROBE_SAMPLES_PER_BATCH)?,
        probe_chance: 1.0 / (per_batch * model.n_patches()) as f64,
    })
}

/// Mean of `f` over the last `n` metrics.
pub fn tail_mean(metrics: &[StepMetrics], n: usize, f: impl Fn(&StepMetrics) -> f64) -> f64 {
    let tail = &metrics[metrics.len().saturating_sub(n)..];
    tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
}

/// Trains on the dataset described by `cfg.data`.
pub fn train(cfg: &RunConfigFile, init: Option<Params>) -> Result<StageOutput> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.data)?;
    Ok(run_stage(&cfg.model, &cfg.train, &data, init, |_, _| {})?)
}

/// Writes checkpoint, metrics log and resolved config into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfigFile, out: &StageOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    save_checkpoint(&out.params, &cfg.model, &cfg.train, &dir.join(CHECKPOINT_FILE))?;
    write_metrics(&out.metrics, &dir.join(METRICS_FILE))?;
    let resolved = RunConfigFile {
        train: cfg.train.resolved(),
        ..cfg.clone()
    };
    resolved.save(&dir.join(RESOLVED_CONFIG_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Alpha,
    Ratio,
    Lossfn,
}

impl Grid {
    pub fn name(self) -> &'static str {
        match self {
            Grid::Alpha => "alpha",
            Grid::Ratio => "ratio",
            Grid::Lossfn => "lossfn",
        }
    }

    /// The grid points as `(label, config)` pairs, all sharing `base`'s seed.
    pub fn points(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        match self {
            Grid::Alpha => [0.1, 0.01, 0.001]
                .into_iter()
                .map(|alpha| (alpha.to_string(), TrainConfig { alpha, ..base.clone() }))
                .collect(),
            Grid::Ratio => [0.5, 0.8, 1.0]
                .into_iter()
                .map(|data_ratio| (data_ratio.to_string(), TrainConfig { data_ratio, ..base.clone() }))
                .collect(),
            Grid::Lossfn => LossVariant::ALL
                .into_iter()
                .map(|loss_variant| (loss_variant.label().to_string(), TrainConfig { loss_variant, ..base.clone() }))
                .collect(),
        }
    }
}

/// One row of a sweep comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid: String,
    pub value: String,
    pub alpha: f64,
    pub data_ratio: f64,
    pub loss_variant: String,
    pub final_l_text: f64,
    pub final_l_image: f64,
    pub final_total: f64,
    pub caption_exact: f64,
    pub shape_acc: f64,
    pub color_acc: f64,
    pub row_acc: f64,
    pub col_acc: f64,
    pub probe_accuracy: f64,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub table: PathBuf,
}

/// Trains every point of `grid`, writes each run under `out/<grid>_<i>/`
/// and the comparison table to `out/sweep_<grid>.csv`.
pub fn sweep(cfg: &RunConfigFile, grid: Grid, out: &Path, mut progress: impl FnMut(&SweepRow)) -> Result<SweepOutput> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.data)?;
    let heldout = generate_dataset(&heldout_spec(&cfg.data))?;
    let mut rows = Vec::new();
    for (i, (value, train)) in grid.points(&cfg.train).into_iter().enumerate() {
        let point = RunConfigFile {
            train,
            ..cfg.clone()
        };
        let run = run_stage(&point.model, &point.train, &data, None, |_, _| {})?;
        write_run(&out.join(format!("{}_{i}", grid.name())), &point, &run)?;
        let eval = evaluate(&run.params, &point.model, &heldout, point.train.offset)?;
        let row = SweepRow {
            grid: grid.name().into(),
            value,
            alpha: point.train.alpha,
            data_ratio: point.train.data_ratio,
            loss_variant: point.train.loss_variant.label().into(),
            final_l_text: tail_mean(&run.metrics, 10, |m| m.l_text),
            final_l_image: tail_mean(&run.metrics, 10, |m| m.l_image),
            final_total: tail_mean(&run.metrics, 10, |m| m.total),
            caption_exact: eval.captions.exact_match,
            shape_acc: eval.captions.shape,
            color_acc: eval.captions.color,
            row_acc: eval.captions.row,
            col_acc: eval.captions.col,
            probe_accuracy: eval.probe.accuracy,
        };
        progress(&row);
        rows.push(row);
    }
    let table = out.join(format!("sweep_{}.csv", grid.name()));
    let mut w = csv::Writer::from_path(&table).map_err(|e| csv_io(&table, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_io(&table, e))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: table.clone(),
        source: e,
    })?;
    Ok(SweepOutput { rows, table })
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}
