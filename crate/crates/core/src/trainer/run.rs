use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Stage, TrainConfig};
use super::optim::{clip_global_norm, lr_schedule, OptimizerState};
use super::plan::{build_epoch_plan, build_half_split_plan, EpochPlan, ModeCounts};
use crate::autodiff::Graph;
use crate::data::MultimodalSample;
use crate::error::{Error, Result};
use crate::model::{forward_sample, init_parameters, ModelConfig, Params};
use crate::objective::{hybrid_loss, BatchItem, LossBreakdown, ModeLabel};

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub l_text: f64,
    pub l_image: f64,
    pub total: f64,
    pub lr: f64,
    pub mode_counts: ModeCounts,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

pub fn write_metrics(metrics: &[StepMetrics], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in metrics {
        writeln!(w, "{}", m.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Forward, hybrid loss, backward, clip and AdamW update on one batch.
/// Non-finite values abort with a numeric error before any parameter moves.
pub fn train_step(
    params: &mut Params,
    optimizer: &mut OptimizerState,
    model: &ModelConfig,
    config: &TrainConfig,
    batch: &[(&MultimodalSample, ModeLabel)],
    lr: f64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Usage("train_step needs a non-empty batch".into()));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let items = batch
        .iter()
        .map(|&(s, mode)| {
            Ok(BatchItem {
                forward: forward_sample(&mut g, &bound, model, &s.image, &s.prompt, &s.response, mode)?,
                mode,
                prompt: s.prompt.clone(),
                response: s.response.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = hybrid_loss(&mut g, &items, &config.objective())?;
    let b = loss.breakdown;
    if ![b.l_text, b.l_image, b.total].iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric { op: "hybrid_loss" });
    }

    let mut grads = g.backward(loss.total)?;
    let mut named = BTreeMap::new();
    for (name, &var) in bound.iter() {
        if let Some(gr) = grads.take(var) {
            if !gr.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric { op: "backward" });
            }
            named.insert(name.clone(), gr);
        }
    }
    clip_global_norm(&mut named, config.grad_clip);
    optimizer.update(params, &named, lr)?;
    Ok(b)
}

/// Result of [`run_stage`].
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub params: Params,
    pub metrics: Vec<StepMetrics>,
}

fn next_plan(n: usize, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<EpochPlan> {
    if config.half_split && config.stage == Stage::Pretrain {
        build_half_split_plan(n, config.batch_size, rng)
    } else {
        build_epoch_plan(n, config.effective_ratio(), rng)
    }
}

/// Runs `config.steps` optimizer steps over `dataset`.
///
/// Pretraining starts from `init` or from a fresh seeded initialization; SFT
/// requires `init`, runs text-only and defaults to the SFT learning rate.
/// `observer` sees every step's metrics and the parameters after the update.
pub fn run_stage<F>(
    model: &ModelConfig,
    config: &TrainConfig,
    dataset: &[MultimodalSample],
    init: Option<Params>,
    mut observer: F,
) -> Result<StageOutput>
where
    F: FnMut(&StepMetrics, &Params),
{
    model.validate()?;
    config.validate()?;
    let mut params = match (init, config.stage) {
        (Some(p), _) => {
            p.check_layout(model)?;
            p
        }
        (None, Stage::Pretrain) => init_parameters(model, config.seed),
        (None, Stage::Sft) => return Err(Error::config("train.init", "the sft stage needs initial parameters")),
    };
    let mut optimizer = OptimizerState::new(&params, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);

    let peak = config.learning_rate();
    let mut plan = next_plan(dataset.len(), config, &mut rng)?;
    let mut cursor = 0;
    let mut metrics = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        if cursor == plan.len() {
            plan = next_plan(dataset.len(), config, &mut rng)?;
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(plan.len());
        let entries = &plan.entries[cursor..end];
        cursor = end;
        let batch: Vec<(&MultimodalSample, ModeLabel)> = entries.iter().map(|&(i, m)| (&dataset[i], m)).collect();

        let lr = lr_schedule(step, config.steps, peak, config.warmup_fraction);
        let b = train_step(&mut params, &mut optimizer, model, config, &batch, lr)?;
        let m = StepMetrics {
            step,
            l_text: b.l_text,
            l_image: b.l_image,
            total: b.total,
            lr,
            mode_counts: ModeCounts::of(entries),
        };
        observer(&m, &params);
        metrics.push(m);
    }
    Ok(StageOutput { params, metrics })
}
