//! AdamW training with a linear learning-rate schedule, per-epoch validation,
//! checkpoint files and corpus-wide prediction.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Tape, Tensor, Var};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{self, FileScores};
use crate::model::{
    self, file_forward, forward_window, init_params, mix_seed, BoundParams, ModelConfig,
    ModelParams, Objective, ParamKind,
};
use crate::preprocess::{encode_file, merge_window_scores, window_plan, FileWindow};
use crate::tokenizer::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    /// Parameters and optimizer moments are rounded to `f32` after every
    /// update and stored as `f32` in checkpoints.
    Single,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Precision::Double),
            "single" => Ok(Precision::Single),
            _ => Err(Error::invalid(format!("unknown precision `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Peak learning rate.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub warmup_fraction: f64,
    /// Loss weights of the clean and defective classes.
    pub class_weights: [f64; 2],
    pub seed: u64,
    pub precision: Precision,
    /// Lines shared by consecutive windows of one file.
    pub overlap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 10,
            batch_size: 16,
            warmup_fraction: 0.0,
            class_weights: [1.0, 1.0],
            seed: 0,
            precision: Precision::Double,
            overlap: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction outside [0, 1)"));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "adam_eps must be positive and weight_decay non-negative",
            ));
        }
        if self
            .class_weights
            .iter()
            .any(|w| !(*w > 0.0) || !w.is_finite())
        {
            return Err(Error::invalid("class weights must be positive"));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to the peak over `warmup_fraction · total_steps`
/// steps, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let peak = config.learning_rate;
    let total = total_steps.max(1) as f64;
    let step = (step as f64).min(total);
    let warmup = config.warmup_fraction * total;
    if step < warmup {
        peak * step / warmup
    } else {
        peak * (total - step) / (total - warmup)
    }
}

pub type NamedTensors = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: NamedTensors,
    pub second_moment: NamedTensors,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: NamedTensors = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        OptimizerState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

fn round_f32(data: &mut [f64]) {
    for v in data {
        *v = *v as f32 as f64;
    }
}

/// One decoupled-weight-decay Adam update. Only [`ParamKind::Weight`] tensors decay.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &NamedTensors,
    state: &mut OptimizerState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::shape(format!("no gradient for {name}")))?;
        let m = state.first_moment.get(name);
        if g.shape() != p.shape() || m.map(Tensor::shape) != Some(p.shape()) {
            return Err(Error::shape(format!(
                "gradient or moment shape differs for {name}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    let single = config.precision == Precision::Single;
    for (name, p) in params.iter_mut() {
        let decay = if ParamKind::of(name) == ParamKind::Weight {
            config.weight_decay
        } else {
            0.0
        };
        let g = grads[name].data();
        let m = state
            .first_moment
            .get_mut(name)
            .expect("checked above")
            .data_mut();
        let v = state
            .second_moment
            .get_mut(name)
            .expect("moments mirror params")
            .data_mut();
        let theta = p.data_mut();
        for i in 0..theta.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            theta[i] -= lr * (m_hat / (v_hat.sqrt() + config.adam_eps) + decay * theta[i]);
        }
        if single {
            round_f32(theta);
            round_f32(m);
            round_f32(v);
        }
    }
    Ok(())
}

/// Loss of one window: masked line cross-entropy, or the file head's
/// cross-entropy against the window label.
pub fn compute_loss(
    tape: &mut Tape,
    params: &BoundParams,
    model_config: &ModelConfig,
    class_weights: [f64; 2],
    window: &FileWindow,
    training: bool,
    seed: u64,
) -> Result<Var> {
    match model_config.objective {
        Objective::Line => {
            let probs = forward_window(tape, params, model_config, window, training, seed)?;
            tape.masked_cross_entropy(
                probs,
                &window.line_labels,
                &window.line_mask,
                &class_weights,
            )
        }
        Objective::File => {
            let out = file_forward(tape, params, model_config, window, training, seed)?;
            tape.masked_cross_entropy(out.probs, &[window.file_label()], &[1], &class_weights)
        }
    }
}

/// Loss and named gradients of one window in training mode.
pub fn window_gradients(
    params: &ModelParams,
    window: &FileWindow,
    config: &TrainConfig,
    seed: u64,
) -> Result<(f64, NamedTensors)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let loss = compute_loss(
        &mut tape,
        &bound,
        &params.config,
        config.class_weights,
        window,
        true,
        seed,
    )?;
    let value = tape.value(loss)[0];
    let mut grads = tape.backward(loss)?;
    let named = bound
        .iter()
        .map(|(n, &v)| (n.clone(), grads.take(v).expect("every parameter is a leaf")))
        .collect();
    Ok((value, named))
}

/// Averages gradients over `batch` (in order) and applies one AdamW update.
/// Returns the mean loss; a non-finite loss aborts before any update.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &[&FileWindow],
    lr: f64,
    config: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total: Option<NamedTensors> = None;
    let mut loss_sum = 0.0;
    for (i, w) in batch.iter().enumerate() {
        let (loss, grads) = window_gradients(params, w, config, mix_seed(seed, i as u64))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: state.step as usize + 1,
                loss,
            });
        }
        loss_sum += loss;
        match total.as_mut() {
            None => total = Some(grads),
            Some(acc) => {
                for (name, g) in grads {
                    let a = acc.get_mut(&name).expect("same parameter set").data_mut();
                    for (x, y) in a.iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut grads = total.expect("non-empty batch");
    for g in grads.values_mut() {
        for x in g.data_mut() {
            *x *= scale;
        }
    }
    adamw_step(params, &grads, state, lr, config)?;
    Ok(loss_sum * scale)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Epoch the parameters come from; 0 for the initial parameters.
    pub epoch: usize,
    pub vocab_hash: String,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        &self.params.config
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_auroc: Option<f64>,
}

pub fn training_log_jsonl(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_training_log(records: &[EpochRecord], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, training_log_jsonl(records).as_bytes())
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters of the epoch with the best validation AuROC.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

pub fn encode_corpus(
    vocab: &Vocabulary,
    corpus: &Corpus,
    cfg: &ModelConfig,
    overlap: usize,
) -> Result<Vec<FileWindow>> {
    let mut out = Vec::new();
    for f in &corpus.files {
        out.extend(encode_file(
            vocab,
            f,
            cfg.max_lines,
            cfg.tokens_per_line,
            overlap,
        )?);
    }
    Ok(out)
}

fn check_vocab(vocab: &Vocabulary, cfg: &ModelConfig) -> Result<()> {
    if vocab.size() != cfg.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.size(),
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Inference-mode loss and real-line defect scores of one window.
fn evaluate_window(
    params: &ModelParams,
    window: &FileWindow,
    class_weights: [f64; 2],
) -> Result<(f64, Vec<f64>)> {
    let cfg = &params.config;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let n_real = window.n_real_lines();
    match cfg.objective {
        Objective::Line => {
            let probs = forward_window(&mut tape, &bound, cfg, window, false, 0)?;
            let loss = tape.masked_cross_entropy(
                probs,
                &window.line_labels,
                &window.line_mask,
                &class_weights,
            )?;
            let p = tape.value(probs);
            Ok((
                tape.value(loss)[0],
                (0..n_real).map(|r| p[2 * r + 1]).collect(),
            ))
        }
        Objective::File => {
            let out = file_forward(&mut tape, &bound, cfg, window, false, 0)?;
            let loss =
                tape.masked_cross_entropy(out.probs, &[window.file_label()], &[1], &class_weights)?;
            Ok((tape.value(loss)[0], out.line_scores[..n_real].to_vec()))
        }
    }
}

fn score_corpus(
    params: &ModelParams,
    vocab: &Vocabulary,
    corpus: &Corpus,
    overlap: usize,
    class_weights: [f64; 2],
) -> Result<(f64, Vec<FileScores>)> {
    let cfg = &params.config;
    let mut loss_sum = 0.0;
    let mut n_windows = 0usize;
    let mut out = Vec::with_capacity(corpus.len());
    for f in &corpus.files {
        let plan = window_plan(f.n_lines(), cfg.max_lines, overlap)?;
        let windows = encode_file(vocab, f, cfg.max_lines, cfg.tokens_per_line, overlap)?;
        let mut per_window = Vec::with_capacity(windows.len());
        for w in &windows {
            let (loss, scores) = evaluate_window(params, w, class_weights)?;
            loss_sum += loss;
            n_windows += 1;
            per_window.push((w.origin.clone(), scores));
        }
        out.push(FileScores {
            path: f.path.clone(),
            scores: merge_window_scores(&per_window, &plan, f.n_lines())?,
        });
    }
    Ok((loss_sum / n_windows.max(1) as f64, out))
}

/// Per-line defect probabilities for every file of `corpus`, with windows
/// cut using `overlap`.
pub fn predict_with_params(
    params: &ModelParams,
    vocab: &Vocabulary,
    corpus: &Corpus,
    overlap: usize,
) -> Result<Vec<FileScores>> {
    check_vocab(vocab, &params.config)?;
    Ok(score_corpus(params, vocab, corpus, overlap, [1.0, 1.0])?.1)
}

pub fn predict_corpus(
    checkpoint: &Checkpoint,
    vocab: &Vocabulary,
    corpus: &Corpus,
) -> Result<Vec<FileScores>> {
    let found = vocab.content_hash();
    if found != checkpoint.vocab_hash {
        return Err(Error::VocabMismatch {
            expected: checkpoint.vocab_hash.clone(),
            found,
        });
    }
    predict_with_params(
        &checkpoint.params,
        vocab,
        corpus,
        checkpoint.train_config.overlap,
    )
}

fn round_params(params: &mut ModelParams) {
    for (_, t) in params.iter_mut() {
        round_f32(t.data_mut());
    }
}

/// Trains from seeded initial parameters and returns the checkpoint with the
/// best validation AuROC (validation loss breaks ties and stands in when
/// AuROC is undefined).
pub fn fit(
    train: &Corpus,
    validation: &Corpus,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    model_config.validate()?;
    check_vocab(vocab, model_config)?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let windows = encode_corpus(vocab, train, model_config, config.overlap)?;
    window_plan(1, model_config.max_lines, config.overlap)?;

    let mut params = init_params(model_config, config.seed)?;
    if config.precision == Precision::Single {
        round_params(&mut params);
    }
    let mut state = OptimizerState::new(&params);
    let vocab_hash = vocab.content_hash();
    let mut best = Checkpoint {
        train_config: config.clone(),
        params: params.clone(),
        optimizer: state.clone(),
        epoch: 0,
        vocab_hash: vocab_hash.clone(),
    };
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut log = Vec::with_capacity(config.epochs);

    let steps_per_epoch = windows.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1_000 + epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&FileWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let step = state.step as usize;
            let lr = lr_at(step, total_steps, config);
            let seed = mix_seed(config.seed, 2_000_000 + step as u64);
            loss_sum += train_step(&mut params, &mut state, &batch, lr, config, seed, epoch)?
                * batch.len() as f64;
        }
        let train_loss = loss_sum / windows.len() as f64;
        let (validation_loss, scores) = score_corpus(
            &params,
            vocab,
            validation,
            config.overlap,
            config.class_weights,
        )?;
        let validation_auroc = metrics::auroc(&metrics::scored_lines(&scores, validation)?);
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, validation loss {validation_loss:.5}, validation AuROC {}",
            validation_auroc.map_or("undefined".to_string(), |a| format!("{a:.5}"))
        );
        let key = (validation_auroc.unwrap_or(-1.0), -validation_loss);
        if key > best_key {
            best_key = key;
            best = Checkpoint {
                train_config: config.clone(),
                params: params.clone(),
                optimizer: state.clone(),
                epoch,
                vocab_hash: vocab_hash.clone(),
            };
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            validation_auroc,
        });
    }
    Ok(FitOutcome {
        checkpoint: best,
        log,
    })
}

const CHECKPOINT_MAGIC: &str = "lwck";
const CHECKPOINT_VERSION: &str = "v1";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    step: u64,
    vocab_hash: String,
    dtype: String,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint",
        reason: reason.into(),
    }
}

/// Serializes to the checkpoint file format: a `lwck v1` header line, a
/// `meta` JSON line, one `tensor <group> <name> <shape> <offset>` line per
/// tensor, a `payload <bytes> <sha256>` line, then the little-endian values.
pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let single = ckpt.train_config.precision == Precision::Single;
    let width = if single { 4 } else { 8 };
    let meta = CheckpointMeta {
        model_config: ckpt.params.config.clone(),
        train_config: ckpt.train_config.clone(),
        epoch: ckpt.epoch,
        step: ckpt.optimizer.step,
        vocab_hash: ckpt.vocab_hash.clone(),
        dtype: if single { "f32" } else { "f64" }.to_string(),
    };
    let mut head = format!(
        "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nmeta {}\n",
        serde_json::to_string(&meta).expect("metadata serializes")
    );
    let groups: [(&str, Vec<(&String, &Tensor)>); 3] = [
        ("param", ckpt.params.iter().collect()),
        ("adam_m", ckpt.optimizer.first_moment.iter().collect()),
        ("adam_v", ckpt.optimizer.second_moment.iter().collect()),
    ];
    let mut payload = Vec::new();
    for (group, tensors) in &groups {
        for (name, t) in tensors {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            head.push_str(&format!(
                "tensor {group} {name} {} {}\n",
                shape.join(","),
                payload.len()
            ));
            for &v in t.data() {
                if single {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    debug_assert_eq!(payload.len() % width, 0);
    head.push_str(&format!(
        "payload {} {}\n",
        payload.len(),
        hex::encode(Sha256::digest(&payload))
    ));
    let mut out = head.into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0;
    let mut next_line = |what: &str| -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt(format!("truncated before {what}")))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| corrupt(format!("{what} is not UTF-8")))
    };

    let header = next_line("header")?;
    match header.split_once(' ') {
        Some((CHECKPOINT_MAGIC, CHECKPOINT_VERSION)) => {}
        Some((CHECKPOINT_MAGIC, other)) => {
            return Err(Error::Version {
                what: "checkpoint",
                found: other.to_string(),
            })
        }
        _ => return Err(corrupt("missing `lwck` header")),
    }
    let meta: CheckpointMeta = next_line("metadata")?
        .strip_prefix("meta ")
        .ok_or_else(|| corrupt("missing metadata line"))
        .and_then(|j| serde_json::from_str(j).map_err(|e| corrupt(format!("metadata: {e}"))))?;
    let width = match meta.dtype.as_str() {
        "f64" => 8,
        "f32" => 4,
        other => return Err(corrupt(format!("unknown dtype {other}"))),
    };

    let mut entries = Vec::new();
    let (payload_len, digest) = loop {
        let line = next_line("payload line")?;
        let fields: Vec<&str> = line.split(' ').collect();
        match fields.as_slice() {
            ["tensor", group, name, shape, offset] => {
                let shape = shape
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| corrupt(format!("bad shape for {name}")))?;
                let offset: usize = offset
                    .parse()
                    .map_err(|_| corrupt(format!("bad offset for {name}")))?;
                entries.push((group.to_string(), name.to_string(), shape, offset));
            }
            ["payload", len, digest] => {
                let len: usize = len.parse().map_err(|_| corrupt("bad payload length"))?;
                break (len, digest.to_string());
            }
            _ => return Err(corrupt(format!("unexpected manifest line `{line}`"))),
        }
    };
    let payload = &bytes[pos..];
    if payload.len() < payload_len {
        return Err(corrupt(format!(
            "truncated payload: {} of {payload_len} bytes",
            payload.len()
        )));
    }
    if payload.len() > payload_len {
        return Err(corrupt("trailing bytes after payload"));
    }
    if hex::encode(Sha256::digest(payload)) != digest {
        return Err(corrupt("payload hash mismatch"));
    }

    let mut groups: BTreeMap<String, NamedTensors> = BTreeMap::new();
    let mut expected_offset = 0;
    for (group, name, shape, offset) in entries {
        if offset != expected_offset {
            return Err(corrupt(format!(
                "{group} {name} at offset {offset}, expected {expected_offset}"
            )));
        }
        let n: usize = shape.iter().product();
        let end = offset + n * width;
        if end > payload.len() {
            return Err(corrupt(format!("{group} {name} runs past the payload")));
        }
        let data: Vec<f64> = payload[offset..end]
            .chunks_exact(width)
            .map(|c| match width {
                8 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                _ => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            })
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?;
        if groups
            .entry(group.clone())
            .or_default()
            .insert(name.clone(), tensor)
            .is_some()
        {
            return Err(corrupt(format!("duplicate tensor {group} {name}")));
        }
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(corrupt("payload has unlisted bytes"));
    }

    let mut take = |g: &str| groups.remove(g).unwrap_or_default();
    let params = ModelParams::from_tensors(meta.model_config, take("param"))
        .map_err(|e| corrupt(e.to_string()))?;
    let optimizer = OptimizerState {
        step: meta.step,
        first_moment: take("adam_m"),
        second_moment: take("adam_v"),
    };
    for moments in [&optimizer.first_moment, &optimizer.second_moment] {
        let matches = moments.len() == params.names().len()
            && params
                .iter()
                .all(|(n, t)| moments.get(n).map(Tensor::shape) == Some(t.shape()));
        if !matches {
            return Err(corrupt("optimizer moments do not mirror the parameters"));
        }
    }
    Ok(Checkpoint {
        train_config: meta.train_config,
        params,
        optimizer,
        epoch: meta.epoch,
        vocab_hash: meta.vocab_hash,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &checkpoint_to_bytes(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&crate::io::read_bytes(path)?)
}

/// Builds a checkpoint around freshly initialised parameters.
pub fn initial_checkpoint(
    model_config: &ModelConfig,
    config: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<Checkpoint> {
    let mut params = model::init_params(model_config, config.seed)?;
    if config.precision == Precision::Single {
        round_params(&mut params);
    }
    Ok(Checkpoint {
        train_config: config.clone(),
        optimizer: OptimizerState::new(&params),
        params,
        epoch: 0,
        vocab_hash: vocab.content_hash(),
    })
}
