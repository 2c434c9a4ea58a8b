use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

use super::ModelConfig;

/// Named parameter tensors, ordered lexicographically by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

fn block_shapes(prefix: &str, d: usize, hidden: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    let mut add = |name: &str, shape: Vec<usize>, init| out.push((format!("{prefix}.{name}"), shape, init));
    add("ln1.gain", vec![d], Init::Ones);
    add("ln1.bias", vec![d], Init::Zeros);
    add("attn.q.weight", vec![d, d], Init::Normal);
    add("attn.q.bias", vec![d], Init::Zeros);
    // no key bias: it shifts every score in a row equally, so softmax ignores it
    add("attn.k.weight", vec![d, d], Init::Normal);
    add("attn.v.weight", vec![d, d], Init::Normal);
    add("attn.v.bias", vec![d], Init::Zeros);
    add("attn.out.weight", vec![d, d], Init::Normal);
    add("attn.out.bias", vec![d], Init::Zeros);
    add("ln2.gain", vec![d], Init::Ones);
    add("ln2.bias", vec![d], Init::Zeros);
    add("mlp.fc.weight", vec![d, hidden], Init::Normal);
    add("mlp.fc.bias", vec![hidden], Init::Zeros);
    add("mlp.proj.weight", vec![hidden, d], Init::Normal);
    add("mlp.proj.bias", vec![d], Init::Zeros);
}

fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let mut v = vec![
        ("vision.patch_embed.weight".into(), vec![c.patch_dim(), d], Init::Normal),
        ("vision.patch_embed.bias".into(), vec![d], Init::Zeros),
        ("vision.pos_embed".into(), vec![c.n_patches(), d], Init::Normal),
        ("vision.ln_post.gain".into(), vec![d], Init::Ones),
        ("vision.ln_post.bias".into(), vec![d], Init::Zeros),
        ("projector.fc1.weight".into(), vec![d, c.projector_hidden], Init::Normal),
        ("projector.fc1.bias".into(), vec![c.projector_hidden], Init::Zeros),
        ("projector.fc2.weight".into(), vec![c.projector_hidden, d], Init::Normal),
        ("projector.fc2.bias".into(), vec![d], Init::Zeros),
        ("decoder.tok_embed".into(), vec![c.vocab_size, d], Init::Normal),
        ("decoder.pos_embed".into(), vec![c.max_seq_len, d], Init::Normal),
        ("decoder.ln_f.gain".into(), vec![d], Init::Ones),
        ("decoder.ln_f.bias".into(), vec![d], Init::Zeros),
        ("lm_head.weight".into(), vec![d, c.vocab_size], Init::Normal),
        ("lm_head.bias".into(), vec![c.vocab_size], Init::Zeros),
    ];
    for i in 0..c.vision_layers {
        block_shapes(&format!("vision.blocks.{i}"), d, c.mlp_hidden(), &mut v);
    }
    for i in 0..c.n_layers {
        block_shapes(&format!("decoder.blocks.{i}"), d, c.mlp_hidden(), &mut v);
    }
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

/// Deterministic initialization: weights `0.02·N(0,1)`, biases zero, gains one.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Params {
    init_parameters_with_std(config, seed, 0.02)
}

/// [`init_parameters`] with a custom weight scale; biases and gains are
/// drawn around their usual values too when `std` differs from the default,
/// so gradient checks exercise non-degenerate normalization parameters.
pub fn init_parameters_with_std(config: &ModelConfig, seed: u64, std: f64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturb = std != 0.02;
    let tensors = layout(config)
        .into_iter()
        .map(|(name, shape, init)| {
            let t = match init {
                Init::Normal => Tensor::randn(&shape, std, &mut rng),
                Init::Zeros if perturb => Tensor::randn(&shape, 0.1, &mut rng),
                Init::Ones if perturb => {
                    let mut t = Tensor::randn(&shape, 0.1, &mut rng);
                    t.data_mut().iter_mut().for_each(|v| *v += 1.0);
                    t
                }
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
            };
            (name, t)
        })
        .collect();
    Params { tensors }
}

/// Parameter count implied by a configuration.
pub fn parameter_count(config: &ModelConfig) -> usize {
    layout(config).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
}

impl Params {
    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor on `g`; `trainable` selects gradient tracking.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), if trainable { g.param(t) } else { g.constant(t) }))
            .collect();
        BoundParams { vars }
    }

    /// Checks that names and shapes agree with the layout of `config`.
    pub fn check_layout(&self, config: &ModelConfig) -> crate::Result<()> {
        let want = layout(config);
        if want.len() != self.tensors.len() {
            return Err(crate::Error::config(
                "params",
                format!("expected {} tensors, found {}", want.len(), self.tensors.len()),
            ));
        }
        for (name, shape, _) in want {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(crate::Error::config(
                        name,
                        format!("expected shape {shape:?}, found {:?}", t.shape()),
                    ))
                }
                None => return Err(crate::Error::config(name, "missing tensor")),
            }
        }
        Ok(())
    }
}

/// Parameters recorded on a graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
