use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::objective::ModeLabel;
use crate::tensor::Tensor;

use super::layout::{checked_layout, mode_token, SequenceLayout};
use super::params::{BoundParams, Params};
use super::patch::{patchify, PatchGrid};
use super::ModelConfig;
use crate::data::special;

pub const LN_EPS: f64 = 1e-5;

/// Per-patch output of vision encoder + projector, `n_patches × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedImageEmbeddings {
    pub matrix: Tensor,
}

/// Graph handles produced by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Final-layer output after the final layer norm, `T × d_model`.
    pub hidden: Var,
    pub logits: Var,
    /// `attention[layer][head]`, each `T × T`.
    pub attention: Vec<Vec<Var>>,
}

/// Materialized forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub hidden_states: Tensor,
    pub logits: Tensor,
    pub attention: Vec<Vec<Tensor>>,
    pub layout: SequenceLayout,
}

impl ForwardVars {
    pub fn materialize(&self, g: &Graph, layout: &SequenceLayout) -> ForwardOutput {
        ForwardOutput {
            hidden_states: g.tensor(self.hidden),
            logits: g.tensor(self.logits),
            attention: self
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&h| g.tensor(h)).collect())
                .collect(),
            layout: layout.clone(),
        }
    }
}

fn linear(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.var(&format!("{prefix}.weight")))?;
    g.add_bias(y, p.var(&format!("{prefix}.bias")))
}

fn norm(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    g.layer_norm(x, p.var(&format!("{prefix}.gain")), p.var(&format!("{prefix}.bias")), LN_EPS)
}

/// Pre-norm transformer block. Returns the new residual stream and the
/// per-head attention probabilities.
fn block(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, prefix: &str, x: Var, causal: bool) -> Result<(Var, Vec<Var>)> {
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let h = norm(g, p, &format!("{prefix}.ln1"), x)?;
    let q_all = linear(g, p, &format!("{prefix}.attn.q"), h)?;
    let k_all = g.matmul(h, p.var(&format!("{prefix}.attn.k.weight")))?;
    let v_all = linear(g, p, &format!("{prefix}.attn.v"), h)?;
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut probs = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let q = g.slice_cols(q_all, head * hd, hd)?;
        let k = g.slice_cols(k_all, head * hd, hd)?;
        let v = g.slice_cols(v_all, head * hd, hd)?;
        let s = g.matmul_nt(q, k)?;
        let s = g.scale(s, scale)?;
        let a = if causal { g.causal_softmax(s)? } else { g.softmax_lastdim(s)? };
        heads.push(g.matmul(a, v)?);
        probs.push(a);
    }
    let merged = g.concat_cols(&heads)?;
    let attn_out = linear(g, p, &format!("{prefix}.attn.out"), merged)?;
    let x = g.add(x, attn_out)?;

    let h = norm(g, p, &format!("{prefix}.ln2"), x)?;
    let h = linear(g, p, &format!("{prefix}.mlp.fc"), h)?;
    let h = g.gelu(h)?;
    let h = linear(g, p, &format!("{prefix}.mlp.proj"), h)?;
    Ok((g.add(x, h)?, probs))
}

/// Patch embedding + learned per-patch positions + bidirectional vision
/// blocks + final layer norm, then the two-layer GELU projector into `d_model`.
pub fn encode_and_project(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, patches: &PatchGrid) -> Result<Var> {
    let shape = patches.patches.shape();
    if shape != [cfg.n_patches(), cfg.patch_dim()] {
        return Err(Error::Dimension(format!(
            "patch grid {shape:?} does not match config ({} x {})",
            cfg.n_patches(),
            cfg.patch_dim()
        )));
    }
    let x = g.constant(&patches.patches);
    let x = linear(g, p, "vision.patch_embed", x)?;
    let mut x = g.add(x, p.var("vision.pos_embed"))?;
    for i in 0..cfg.vision_layers {
        x = block(g, p, cfg, &format!("vision.blocks.{i}"), x, false)?.0;
    }
    let x = norm(g, p, "vision.ln_post", x)?;
    let h = linear(g, p, "projector.fc1", x)?;
    let h = g.gelu(h)?;
    linear(g, p, "projector.fc2", h)
}

/// Builds the input embedding matrix for one sample. Position embeddings are
/// added later by [`forward`], so VDEP and LLava inputs differ only in the
/// mode-token row.
pub fn assemble_sequence(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    prompt: &[usize],
    response: &[usize],
    image: Var,
    mode: ModeLabel,
) -> Result<(Var, SequenceLayout)> {
    if g.shape(image) != [cfg.n_patches(), cfg.d_model] {
        return Err(Error::Dimension(format!(
            "image embeddings {:?} do not match {} x {}",
            g.shape(image),
            cfg.n_patches(),
            cfg.d_model
        )));
    }
    let layout = checked_layout(cfg.n_patches(), prompt.len(), response.len(), cfg.max_seq_len)?;
    let table = p.var("decoder.tok_embed");
    let head = g.embedding_lookup(table, &[special::BOS, mode_token(mode)])?;
    let mut tail_ids = Vec::with_capacity(prompt.len() + response.len() + 1);
    tail_ids.extend_from_slice(prompt);
    tail_ids.extend_from_slice(response);
    tail_ids.push(special::EOS);
    let tail = g.embedding_lookup(table, &tail_ids)?;
    let x = g.concat_rows(&[head, image, tail])?;
    Ok((x, layout))
}

/// Causal decoder: positions, pre-norm blocks, final norm, LM head.
pub fn forward(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, inputs: Var, layout: &SequenceLayout) -> Result<ForwardVars> {
    let t = layout.total_len;
    if g.shape(inputs) != [t, cfg.d_model] {
        return Err(Error::Dimension(format!(
            "decoder input {:?} does not match {t} x {}",
            g.shape(inputs),
            cfg.d_model
        )));
    }
    let positions: Vec<usize> = (0..t).collect();
    let pos = g.embedding_lookup(p.var("decoder.pos_embed"), &positions)?;
    let mut x = g.add(inputs, pos)?;
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let (nx, probs) = block(g, p, cfg, &format!("decoder.blocks.{i}"), x, true)?;
        x = nx;
        attention.push(probs);
    }
    let hidden = norm(g, p, "decoder.ln_f", x)?;
    let logits = linear(g, p, "lm_head", hidden)?;
    Ok(ForwardVars {
        hidden,
        logits,
        attention,
    })
}

/// Everything recorded for one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub image: Var,
    pub fwd: ForwardVars,
    pub layout: SequenceLayout,
}

/// Patchify → encode/project → assemble → decode, all on `g`.
pub fn forward_sample(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    image: &[f64],
    prompt: &[usize],
    response: &[usize],
    mode: ModeLabel,
) -> Result<SampleForward> {
    let grid = patchify(image, cfg)?;
    let emb = encode_and_project(g, p, cfg, &grid)?;
    let (inputs, layout) = assemble_sequence(g, p, cfg, prompt, response, emb, mode)?;
    let fwd = forward(g, p, cfg, inputs, &layout)?;
    Ok(SampleForward {
        image: emb,
        fwd,
        layout,
    })
}

/// Gradient-free forward pass over plain tensors.
pub fn infer(
    params: &Params,
    cfg: &ModelConfig,
    image: &[f64],
    prompt: &[usize],
    response: &[usize],
    mode: ModeLabel,
) -> Result<(ForwardOutput, ProjectedImageEmbeddings)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let s = forward_sample(&mut g, &p, cfg, image, prompt, response, mode)?;
    Ok((
        s.fwd.materialize(&g, &s.layout),
        ProjectedImageEmbeddings {
            matrix: g.tensor(s.image),
        },
    ))
}

/// Greedy decoding of `len` response tokens after the prompt, in LLava mode.
pub fn greedy_decode(params: &Params, cfg: &ModelConfig, image: &[f64], prompt: &[usize], len: usize) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let grid = patchify(image, cfg)?;
    let emb = encode_and_project(&mut g, &p, cfg, &grid)?;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let (inputs, layout) = assemble_sequence(&mut g, &p, cfg, prompt, &out, emb, ModeLabel::Llava)?;
        let f = forward(&mut g, &p, cfg, inputs, &layout)?;
        // the token after the last fed position: prompt end (no response yet) or response end
        let last = layout.response.end - 1;
        let v = cfg.vocab_size;
        let row = &g.value(f.logits)[last * v..(last + 1) * v];
        let next = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0;
        out.push(next);
    }
    Ok(out)
}
