//! The hierarchical model: token embeddings, a line encoder over the tokens of
//! each line, a pooling layer down to one vector per line, and a line
//! classifier over the lines of the window that emits a two-way softmax per
//! line. A file-level head supports training against a whole-window label.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::preprocess::FileWindow;

pub const LINE_ENCODER: &str = "line_encoder";
pub const LINE_CLASSIFIER: &str = "line_classifier";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    /// Dense layer over the flattened `T · d_model` token vectors of a line.
    Concat,
    /// Dense layer over the mean of the real token vectors.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Line,
    File,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(Objective::Line),
            "file" => Ok(Objective::File),
            _ => Err(Error::invalid(format!("unknown objective `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Lines per window (L).
    pub max_lines: usize,
    /// Tokens per line (T).
    pub tokens_per_line: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub pool: PoolKind,
    pub objective: Objective,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_lines: 64,
            tokens_per_line: 16,
            vocab_size: 2048,
            dropout: 0.1,
            pool: PoolKind::Concat,
            objective: Objective::Line,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_lines", self.max_lines),
            ("tokens_per_line", self.tokens_per_line),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.init_std > 0.0) || !(self.layer_norm_eps > 0.0) {
            return Err(Error::invalid(
                "init_std and layer_norm_eps must be positive",
            ));
        }
        Ok(())
    }
}

/// How AdamW treats a tensor: only `Weight` is decayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Embedding,
}

impl ParamKind {
    pub fn of(name: &str) -> ParamKind {
        if name.starts_with("embed.") || name.ends_with("line_pos") {
            ParamKind::Embedding
        } else if name.contains(".ln") {
            ParamKind::Norm
        } else if name.ends_with(".weight") {
            ParamKind::Weight
        } else {
            ParamKind::Bias
        }
    }
}

fn layer_names(stack: &str, layer: usize, cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, ff) = (cfg.d_model, cfg.d_ff);
    let p = |s: &str| format!("{stack}.layer{layer}.{s}");
    let mut out = Vec::new();
    for proj in ["q", "k", "v", "o"] {
        out.push((p(&format!("attn.{proj}.weight")), vec![d, d]));
        if proj != "k" {
            out.push((p(&format!("attn.{proj}.bias")), vec![d]));
        }
    }
    out.push((p("ffn.in.weight"), vec![d, ff]));
    out.push((p("ffn.in.bias"), vec![ff]));
    out.push((p("ffn.out.weight"), vec![ff, d]));
    out.push((p("ffn.out.bias"), vec![d]));
    for ln in ["ln1", "ln2"] {
        out.push((p(&format!("{ln}.gain")), vec![d]));
        out.push((p(&format!("{ln}.bias")), vec![d]));
    }
    out
}

/// Every parameter name with its shape, for a config.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("embed.word".to_string(), vec![cfg.vocab_size, d]),
        ("embed.token_pos".to_string(), vec![cfg.tokens_per_line, d]),
        (
            format!("{LINE_CLASSIFIER}.line_pos"),
            vec![cfg.max_lines, d],
        ),
    ];
    for stack in [LINE_ENCODER, LINE_CLASSIFIER] {
        for layer in 0..cfg.n_layers {
            out.extend(layer_names(stack, layer, cfg));
        }
    }
    let pool_in = match cfg.pool {
        PoolKind::Concat => cfg.tokens_per_line * d,
        PoolKind::Mean => d,
    };
    out.push(("pool.weight".into(), vec![pool_in, d]));
    out.push(("pool.bias".into(), vec![d]));
    out.push(("head.weight".into(), vec![d, 2]));
    out.push(("head.bias".into(), vec![2]));
    if cfg.objective == Objective::File {
        out.push(("file_head.weight".into(), vec![d, 2]));
        out.push(("file_head.bias".into(), vec![2]));
    }
    out
}

/// All learnable tensors, addressed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Builds from named tensors, checking names and shapes against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        if expected.len() != tensors.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::shape(format!(
                        "parameter {name}: expected {shape:?}, got {:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::shape(format!("missing parameter {name}"))),
            }
        }
        Ok(ModelParams { config, tensors })
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

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape`, as a trainable leaf or a constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(n, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (n.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Parameter handles on one tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: HashMap<String, Var>,
}

impl BoundParams {
    pub fn from_vars(names: &[String], vars: &[Var]) -> Self {
        BoundParams {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Weights and embeddings ~ N(0, init_std²); biases and norm shifts 0; norm gains 1.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut shapes = param_shapes(config);
    shapes.sort();
    let mut tensors = BTreeMap::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data = match ParamKind::of(&name) {
            ParamKind::Weight | ParamKind::Embedding => {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
            ParamKind::Norm if name.ends_with(".gain") => vec![1.0; n],
            ParamKind::Norm | ParamKind::Bias => vec![0.0; n],
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    ModelParams::from_tensors(config.clone(), tensors)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_window(cfg: &ModelConfig, w: &FileWindow) -> Result<()> {
    if w.rows != cfg.max_lines || w.cols != cfg.tokens_per_line {
        return Err(Error::shape(format!(
            "window is {}x{}, model expects {}x{}",
            w.rows, w.cols, cfg.max_lines, cfg.tokens_per_line
        )));
    }
    Ok(())
}

/// Word embedding plus learned token-position embedding: `[L, T, d_model]`.
pub fn embed_tokens(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    window: &FileWindow,
    training: bool,
    seed: u64,
) -> Result<Var> {
    check_window(cfg, window)?;
    let words = tape.embedding(
        p.var("embed.word"),
        &window.token_ids,
        &[window.rows, window.cols],
    )?;
    let x = tape.add_broadcast(words, p.var("embed.token_pos"))?;
    tape.dropout(x, cfg.dropout, training, mix_seed(seed, 1))
}

/// Post-norm transformer stack over `x [batch, S, d_model]`. Returns the
/// output and the attention node of each layer.
pub fn encoder_stack_forward(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    stack: &str,
    x: Var,
    mask: &[u8],
) -> Result<(Var, Vec<Var>)> {
    let mut h = x;
    let mut attn_nodes = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let name = |s: &str| format!("{stack}.layer{layer}.{s}");
        let dense = |tape: &mut Tape, input: Var, which: &str| -> Result<Var> {
            let y = tape.matmul(input, p.var(&name(&format!("{which}.weight"))))?;
            tape.add_broadcast(y, p.var(&name(&format!("{which}.bias"))))
        };
        let q = dense(tape, h, "attn.q")?;
        let k = tape.matmul(h, p.var(&name("attn.k.weight")))?;
        let v = dense(tape, h, "attn.v")?;
        let a = tape.attention(q, k, v, mask, cfg.n_heads)?;
        attn_nodes.push(a);
        let o = dense(tape, a, "attn.o")?;
        let r = tape.add(h, o)?;
        let y = tape.layer_norm(
            r,
            p.var(&name("ln1.gain")),
            p.var(&name("ln1.bias")),
            cfg.layer_norm_eps,
        )?;
        let f = dense(tape, y, "ffn.in")?;
        let f = tape.gelu(f);
        let f = dense(tape, f, "ffn.out")?;
        let r = tape.add(y, f)?;
        h = tape.layer_norm(
            r,
            p.var(&name("ln2.gain")),
            p.var(&name("ln2.bias")),
            cfg.layer_norm_eps,
        )?;
    }
    Ok((h, attn_nodes))
}

/// Token vectors `[L, T, d]` down to one vector per line `[L, d]`.
pub fn pool_lines(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    encoded: Var,
    token_mask: &[u8],
) -> Result<Var> {
    let shape = tape.shape(encoded).to_vec();
    if shape.len() != 3 || token_mask.len() != shape[0] * shape[1] {
        return Err(Error::shape(format!(
            "pooling {shape:?} with mask of {}",
            token_mask.len()
        )));
    }
    let (l, t, d) = (shape[0], shape[1], shape[2]);
    let summary = match cfg.pool {
        PoolKind::Concat => {
            let mask = token_mask.iter().map(|&m| m as f64).collect();
            let masked = tape.mask_rows(encoded, mask)?;
            tape.reshape(masked, &[l, t * d])?
        }
        PoolKind::Mean => {
            let mut weights = vec![0.0; l * t];
            for (row, w) in token_mask.chunks(t).zip(weights.chunks_mut(t)) {
                let n = row.iter().filter(|&&m| m == 1).count();
                if n > 0 {
                    for (m, wi) in row.iter().zip(w.iter_mut()) {
                        *wi = *m as f64 / n as f64;
                    }
                }
            }
            tape.weighted_sum(encoded, weights)?
        }
    };
    let y = tape.matmul(summary, p.var("pool.weight"))?;
    let y = tape.add_broadcast(y, p.var("pool.bias"))?;
    Ok(tape.tanh(y))
}

/// Line vectors after the line positional embedding and the line-classifier
/// stack: `[L, d]`, plus that stack's attention nodes.
pub fn contextualize_lines(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    line_vectors: Var,
    line_mask: &[u8],
) -> Result<(Var, Vec<Var>)> {
    if !line_mask.contains(&1) {
        return Err(Error::invalid("window has no real lines"));
    }
    let shape = tape.shape(line_vectors).to_vec();
    let x = tape.add(line_vectors, p.var(&format!("{LINE_CLASSIFIER}.line_pos")))?;
    let x = tape.reshape(x, &[1, shape[0], shape[1]])?;
    let (h, attn) = encoder_stack_forward(tape, p, cfg, LINE_CLASSIFIER, x, line_mask)?;
    Ok((tape.reshape(h, &shape)?, attn))
}

/// Per-line two-way softmax `[L, 2]`; column 1 is the defect probability.
pub fn classify_lines(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    line_vectors: Var,
    line_mask: &[u8],
    training: bool,
    seed: u64,
) -> Result<Var> {
    let (h, _) = contextualize_lines(tape, p, cfg, line_vectors, line_mask)?;
    let h = tape.dropout(h, cfg.dropout, training, mix_seed(seed, 2))?;
    let logits = tape.matmul(h, p.var("head.weight"))?;
    let logits = tape.add_broadcast(logits, p.var("head.bias"))?;
    Ok(tape.softmax(logits))
}

/// Embedding, line encoder and pooling: one vector per line, `[L, d]`.
pub fn encode_lines(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    window: &FileWindow,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let x = embed_tokens(tape, p, cfg, window, training, seed)?;
    let (h, _) = encoder_stack_forward(tape, p, cfg, LINE_ENCODER, x, &window.token_mask)?;
    pool_lines(tape, p, cfg, h, &window.token_mask)
}

/// Full line-level forward pass; returns the `[L, 2]` probability node.
pub fn forward_window(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    window: &FileWindow,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let lines = encode_lines(tape, p, cfg, window, training, seed)?;
    classify_lines(tape, p, cfg, lines, &window.line_mask, training, seed)
}

pub struct FileForward {
    /// `[1, 2]` softmax of the file head; column 1 is the defect probability.
    pub probs: Var,
    /// Received attention mass of each row times the file defect probability.
    pub line_scores: Vec<f64>,
}

/// File-level forward pass: the mean of the real contextualized line vectors
/// feeds the file head. Line scores come from the attention each line receives
/// in the line-classifier stack.
pub fn file_forward(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    window: &FileWindow,
    training: bool,
    seed: u64,
) -> Result<FileForward> {
    if cfg.objective != Objective::File {
        return Err(Error::invalid(
            "file_forward needs a model built with objective=file",
        ));
    }
    let lines = encode_lines(tape, p, cfg, window, training, seed)?;
    let (h, attn) = contextualize_lines(tape, p, cfg, lines, &window.line_mask)?;
    let l = window.rows;
    let n_real = window.n_real_lines() as f64;
    let weights: Vec<f64> = window
        .line_mask
        .iter()
        .map(|&m| m as f64 / n_real)
        .collect();
    let h3 = tape.reshape(h, &[1, l, cfg.d_model])?;
    let pooled = tape.weighted_sum(h3, weights)?;
    let pooled = tape.dropout(pooled, cfg.dropout, training, mix_seed(seed, 3))?;
    let logits = tape.matmul(pooled, p.var("file_head.weight"))?;
    let logits = tape.add_broadcast(logits, p.var("file_head.bias"))?;
    let probs = tape.softmax(logits);
    let file_prob = tape.value(probs)[1];

    let mass = received_attention(tape, &attn, &window.line_mask);
    let line_scores = mass.iter().map(|m| m * file_prob).collect();
    Ok(FileForward { probs, line_scores })
}

/// Attention received by each key position, averaged over real queries, heads
/// and layers. Sums to 1 over the real positions.
pub fn received_attention(tape: &Tape, attn_nodes: &[Var], line_mask: &[u8]) -> Vec<f64> {
    let l = line_mask.len();
    let real: Vec<usize> = (0..l).filter(|&i| line_mask[i] == 1).collect();
    let mut mass = vec![0.0; l];
    let mut n = 0usize;
    for &node in attn_nodes {
        let (probs, heads) = tape.attention_probs(node).expect("attention node");
        for h in 0..heads {
            for &i in &real {
                let row = &probs[(h * l + i) * l..][..l];
                mass.iter_mut().zip(row).for_each(|(m, p)| *m += p);
                n += 1;
            }
        }
    }
    mass.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    mass
}

/// `[L, 2]` probabilities for one window, with the line mask copied over.
#[derive(Clone, Debug, PartialEq)]
pub struct LinePredictions {
    pub probabilities: Vec<f64>,
    pub line_mask: Vec<u8>,
}

impl LinePredictions {
    pub fn rows(&self) -> usize {
        self.line_mask.len()
    }

    pub fn defect_prob(&self, row: usize) -> f64 {
        self.probabilities[2 * row + 1]
    }

    /// Defect scores of the real rows.
    pub fn real_scores(&self) -> Vec<f64> {
        (0..self.rows())
            .filter(|&r| self.line_mask[r] == 1)
            .map(|r| self.defect_prob(r))
            .collect()
    }
}

/// Inference-mode line scores for one window. For `objective=file` models the
/// column-1 entries are the attention-derived line scores.
pub fn predict_window(params: &ModelParams, window: &FileWindow) -> Result<LinePredictions> {
    let cfg = &params.config;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let probabilities = match cfg.objective {
        Objective::Line => {
            let probs = forward_window(&mut tape, &bound, cfg, window, false, 0)?;
            tape.value(probs).to_vec()
        }
        Objective::File => {
            let out = file_forward(&mut tape, &bound, cfg, window, false, 0)?;
            out.line_scores.iter().flat_map(|&s| [1.0 - s, s]).collect()
        }
    };
    Ok(LinePredictions {
        probabilities,
        line_mask: window.line_mask.clone(),
    })
}
