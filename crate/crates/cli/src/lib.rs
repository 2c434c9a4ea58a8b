//! Command-line surface of the vdep toy trainer.

pub mod config;
pub mod experiment;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vdep::checks::{hybrid_suite, op_suite, CheckResult};
use vdep::data::{generate_dataset, read_dataset, read_records, write_dataset};
use vdep::diagnostics::{attention_flow, attention_flow_head, ensure_prefix_usable, write_heatmap};
use vdep::model::{infer, ModelConfig};
use vdep::objective::ModeLabel;
use vdep::trainer::{load_checkpoint, load_checkpoint_for, Checkpoint, Stage, TrainConfig};
use vdep::Error;

pub use config::RunConfigFile;
use experiment::{evaluate, render_spec, write_run, Grid, CHECKPOINT_FILE, METRICS_FILE, RESOLVED_CONFIG_FILE};

#[derive(Debug, Parser)]
#[command(name = "vdep", version, about = "Toy multimodal trainer with hidden-state image-embedding supervision")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Pretrain,
    Sft,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage and write checkpoint, metrics and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        half_split: bool,
    },
    /// Train every point of an ablation grid and tabulate the results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        grid: Grid,
        #[arg(long)]
        out: PathBuf,
    },
    /// Caption accuracy and reconstruction probe of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Emit attention-flow heatmaps for one sample.
    AttnMap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long = "query-pos")]
        query_pos: usize,
        /// `all` or a comma-separated list of layer indices.
        #[arg(long, default_value = "all")]
        layers: String,
        #[arg(long)]
        out: PathBuf,
        /// Also emit one map per head.
        #[arg(long)]
        per_head: bool,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Include the end-to-end hybrid loss.
        #[arg(long)]
        full: bool,
    },
    /// Print a checkpoint's header and tensor index.
    InspectCkpt {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

/// Seeds of the per-op gradcheck suite.
pub const OP_CHECK_SEEDS: u64 = 20;
/// Seeds of the end-to-end suite run by `gradcheck --full`.
pub const HYBRID_CHECK_SEEDS: u64 = 2;

/// Raised when a gradient check exceeds its tolerance.
#[derive(Debug)]
pub struct CheckFailure(pub String);

impl std::fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailure {}

/// Process exit status for an error: 2 for configuration and validation
/// problems, 3 for numeric failures, 4 for I/O, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config { .. } | Error::Usage(_) | Error::Domain(_) | Error::Format(_) | Error::Parse { .. } => 2,
                Error::Numeric { .. } => 3,
                Error::Io { .. } => 4,
                _ => 1,
            };
        }
        if cause.is::<CheckFailure>() {
            return 3;
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    1
}

/// Executes `cli`, writing reports to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out: path } => gen_data(&spec, &path, out),
        Command::Train {
            config,
            out: dir,
            seed,
            stage,
            init,
            half_split,
        } => train(&config, &dir, seed, stage, init.as_deref(), half_split, out),
        Command::Sweep { config, grid, out: dir } => sweep(&config, grid, &dir, out),
        Command::Eval { ckpt, data } => eval(&ckpt, &data, out),
        Command::AttnMap {
            ckpt,
            data,
            index,
            query_pos,
            layers,
            out: prefix,
            per_head,
        } => attn_map(&ckpt, &data, index, query_pos, &layers, &prefix, per_head, out),
        Command::Gradcheck { config, full } => gradcheck(&config, full, out),
        Command::InspectCkpt { ckpt } => inspect(&ckpt, out),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn gen_data(spec_path: &Path, path: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfigFile::load(spec_path)?;
    let samples = generate_dataset(&cfg.data)?;
    write_dataset(&samples, path)?;
    writeln!(out, "N={} master_seed={}", cfg.data.size, cfg.data.master_seed)?;
    Ok(())
}

fn train(
    config: &Path,
    dir: &Path,
    seed: u64,
    stage: Option<StageArg>,
    init: Option<&Path>,
    half_split: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let mut cfg = RunConfigFile::load(config)?;
    cfg.train.seed = seed;
    if let Some(s) = stage {
        cfg.train.stage = match s {
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::Sft => Stage::Sft,
        };
    }
    cfg.train.half_split |= half_split;
    cfg.validate()?;
    let init = init
        .map(|p| load_checkpoint_for(p, &cfg.model).map(|c| c.params))
        .transpose()?;
    let output = experiment::train(&cfg, init)?;
    write_run(dir, &cfg, &output)?;
    let last = output.metrics.last().expect("at least one step");
    writeln!(
        out,
        "trained {} steps: l_text={:.6} l_image={:.6} total={:.6}",
        output.metrics.len(),
        last.l_text,
        last.l_image,
        last.total
    )?;
    for f in [CHECKPOINT_FILE, METRICS_FILE, RESOLVED_CONFIG_FILE] {
        writeln!(out, "wrote {}", dir.join(f).display())?;
    }
    Ok(())
}

fn sweep(config: &Path, grid: Grid, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfigFile::load(config)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut lines = Vec::new();
    let result = experiment::sweep(&cfg, grid, dir, |r| {
        lines.push(format!(
            "{}={}: l_text={:.4} l_image={:.4} caption_exact={:.3} probe={:.3}",
            r.grid, r.value, r.final_l_text, r.final_l_image, r.caption_exact, r.probe_accuracy
        ));
    })?;
    for l in lines {
        writeln!(out, "{l}")?;
    }
    writeln!(out, "wrote {}", result.table.display())?;
    Ok(())
}

fn load_samples(data: &Path, model: &ModelConfig) -> Result<Vec<vdep::data::MultimodalSample>> {
    let n = read_records(data)?.len();
    if n == 0 {
        bail!(Error::Domain(format!("{} holds no samples", data.display())));
    }
    Ok(read_dataset(data, &render_spec(model, n))?)
}

fn eval(ckpt: &Path, data: &Path, out: &mut dyn Write) -> Result<()> {
    let c = load_checkpoint(ckpt)?;
    let samples = load_samples(data, &c.model)?;
    let report = evaluate(&c.params, &c.model, &samples, c.train.offset)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn parse_layers(spec: &str, n_layers: usize) -> Result<Vec<usize>> {
    if spec.trim() == "all" {
        return Ok((0..n_layers).collect());
    }
    spec.split(',')
        .map(|s| {
            let l: usize = s
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("--layers expects `all` or integers, got `{s}`")))?;
            if l >= n_layers {
                bail!(Error::Usage(format!("layer {l} out of range for {n_layers} layers")));
            }
            Ok(l)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn attn_map(
    ckpt: &Path,
    data: &Path,
    index: usize,
    query: usize,
    layers: &str,
    prefix: &Path,
    per_head: bool,
    out: &mut dyn Write,
) -> Result<()> {
    ensure_prefix_usable(prefix)?;
    let c = load_checkpoint(ckpt)?;
    let layers = parse_layers(layers, c.model.n_layers)?;
    let samples = load_samples(data, &c.model)?;
    let s = samples.get(index).ok_or_else(|| {
        Error::Usage(format!("--index {index} out of range for {} samples", samples.len()))
    })?;
    let (fwd, _) = infer(&c.params, &c.model, &s.image, &s.prompt, &s.response, ModeLabel::Llava)?;
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    for l in layers {
        let mut maps = vec![attention_flow(&fwd, query, l)?];
        if per_head {
            for h in 0..c.model.n_heads {
                maps.push(attention_flow_head(&fwd, query, l, h)?);
            }
        }
        for m in maps {
            let files = write_heatmap(&m, prefix)?;
            writeln!(out, "layer {l} mass {:.6}: {}", m.mass(), files.pgm.display())?;
        }
    }
    Ok(())
}

fn report(results: &[CheckResult], out: &mut dyn Write) -> Result<f64> {
    let mut worst = 0.0f64;
    for r in results {
        writeln!(out, "{} {:.3e} {}", if r.passed() { "ok  " } else { "FAIL" }, r.max_relative_error, r.name)?;
        worst = worst.max(r.max_relative_error);
    }
    Ok(worst)
}

fn gradcheck(config: &Path, full: bool, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfigFile::load(config)?;
    let mut results = Vec::new();
    for seed in 0..OP_CHECK_SEEDS {
        results.extend(op_suite(seed)?.into_iter().map(|mut r| {
            r.name = format!("op {} seed={seed}", r.name);
            r
        }));
    }
    if full {
        results.extend(hybrid_suite(&cfg.model, HYBRID_CHECK_SEEDS, Some(2))?);
    }
    let worst = report(&results, out)?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    writeln!(out, "{} checks, {failed} failed, worst relative error {worst:.3e}", results.len())?;
    if failed > 0 {
        bail!(CheckFailure(format!("{failed} of {} checks at or above 1e-4", results.len())));
    }
    Ok(())
}

fn json_diff(actual: &serde_json::Value, default: &serde_json::Value, section: &str) -> Vec<String> {
    let (Some(a), Some(d)) = (actual.as_object(), default.as_object()) else {
        return Vec::new();
    };
    a.iter()
        .filter(|(k, v)| d.get(*k) != Some(*v))
        .map(|(k, v)| {
            let was = d.get(k).map_or("(unset)".to_string(), ToString::to_string);
            format!("{section}.{k} = {v} (default {was})")
        })
        .collect()
}

fn inspect(ckpt: &Path, out: &mut dyn Write) -> Result<()> {
    let bytes = fs::read(ckpt).map_err(|e| io_err(ckpt, e))?;
    let c = Checkpoint::from_bytes(&bytes).with_context(|| format!("reading {}", ckpt.display()))?;
    let header = c.header();
    writeln!(out, "format: VDEPCKPT v{}", vdep::trainer::VERSION)?;
    writeln!(out, "model: {}", serde_json::to_string(&header.model)?)?;
    writeln!(out, "train: {}", serde_json::to_string(&header.train)?)?;
    writeln!(out, "tensors:")?;
    for t in &header.tensors {
        writeln!(out, "  {} {:?} @{}", t.name, t.shape, t.offset)?;
    }
    writeln!(out, "parameter count: {}", c.params.count())?;
    let mut diff = json_diff(
        &serde_json::to_value(&c.model)?,
        &serde_json::to_value(ModelConfig::default())?,
        "model",
    );
    let default_train = TrainConfig {
        stage: c.train.stage,
        ..TrainConfig::default()
    }
    .resolved();
    diff.extend(json_diff(&serde_json::to_value(&c.train)?, &serde_json::to_value(default_train)?, "train"));
    if diff.is_empty() {
        writeln!(out, "config diff vs defaults: none")?;
    } else {
        writeln!(out, "config diff vs defaults:")?;
        for d in diff {
            writeln!(out, "  {d}")?;
        }
    }
    Ok(())
}
