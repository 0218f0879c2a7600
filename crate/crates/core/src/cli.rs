//! Command-line front end. Every subcommand reads an optional TOML run
//! configuration; flags override it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    generate_synthetic, load_corpus, split_cross_project, split_random, split_timewise, Corpus,
    SplitAssignment, SplitFractions, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalParams, MetricsReport};
use crate::model::{ModelConfig, PoolKind};
use crate::tokenizer::{load_vocab, save_vocab, train_bpe, DEFAULT_VOCAB_SIZE};
use crate::train::{
    fit, load_checkpoint, predict_corpus, save_checkpoint, save_training_log, TrainConfig,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    #[default]
    Random,
    Timewise,
    CrossProject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub kind: SplitKind,
    pub fractions: SplitFractions,
    pub test_project: String,
    pub validation_project: String,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            kind: SplitKind::Random,
            fractions: SplitFractions::default(),
            test_project: "project0".into(),
            validation_project: "project1".into(),
        }
    }
}

/// Everything a run needs, as read from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Target size of the BPE vocabulary.
    pub vocab_size: usize,
    pub synthetic: SyntheticSpec,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            vocab_size: DEFAULT_VOCAB_SIZE,
            synthetic: SyntheticSpec {
                n_files: 2000,
                ..Default::default()
            },
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        require_input(path)?;
        Self::from_toml(&crate::io::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "hierdefect",
    version,
    about = "Line-level defect prediction with a hierarchical transformer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a corpus with planted defect patterns
    Synth(SynthCmd),
    /// Learn a byte-pair vocabulary from a corpus
    BpeTrain(BpeCmd),
    /// Assign corpus files to train / validation / test
    Split(SplitCmd),
    /// Fit a model and write the best checkpoint
    Train(TrainCmd),
    /// Write per-line defect probabilities for a corpus
    Predict(PredictCmd),
    /// Score predictions against labels
    Evaluate(EvaluateCmd),
    /// Synthesize, tokenize, split, train, predict and evaluate in one go
    Pipeline(PipelineCmd),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SynthArgs {
    /// Number of files [default: 2000]
    #[arg(long)]
    pub files: Option<usize>,
    /// Lines per file [default: 64]
    #[arg(long)]
    pub lines: Option<usize>,
    /// Fraction of defective lines [default: 0.03]
    #[arg(long)]
    pub defect_rate: Option<f64>,
    /// Number of projects the files are spread over [default: 4]
    #[arg(long)]
    pub projects: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SplitArgs {
    /// Split strategy [default: random]
    #[arg(long, value_enum)]
    pub split: Option<SplitKind>,
    /// Training share for random and timewise splits [default: 0.8]
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Validation share [default: 0.1]
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Test share [default: 0.1]
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Held-out test project for cross-project splits [default: project0]
    #[arg(long)]
    pub test_project: Option<String>,
    /// Held-out validation project for cross-project splits [default: project1]
    #[arg(long)]
    pub validation_project: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Training objective [default: line]
    #[arg(long, value_parser = ["line", "file"])]
    pub objective: Option<String>,
    /// Embedding width [default: 64]
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Encoder layers per stack [default: 2]
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long)]
    pub n_heads: Option<usize>,
    /// Feed-forward inner width [default: 256]
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Lines per window [default: 64]
    #[arg(long)]
    pub max_lines: Option<usize>,
    /// Tokens kept per line [default: 16]
    #[arg(long)]
    pub tokens_per_line: Option<usize>,
    /// Dropout probability [default: 0.1]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Line pooling [default: concat]
    #[arg(long, value_parser = ["concat", "mean"])]
    pub pool: Option<String>,
    /// Standard deviation of initial weights [default: 0.02]
    #[arg(long)]
    pub init_std: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Peak learning rate [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Decoupled weight decay [default: 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// First-moment decay [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Second-moment decay [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam denominator epsilon [default: 1e-8]
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Training epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Windows per optimizer step [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Share of steps spent warming up [default: 0]
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    /// Loss weight of defective lines; clean lines weigh 1 [default: 1]
    #[arg(long)]
    pub defect_weight: Option<f64>,
    /// Lines shared by consecutive windows [default: 8]
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Arithmetic of stored parameters [default: double]
    #[arg(long, value_parser = ["double", "single"])]
    pub precision: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    /// Probability at which a line counts as predicted defective [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Share of ranked lines inspected for recall [default: 0.2]
    #[arg(long)]
    pub recall_k: Option<f64>,
    /// Share of defective lines to reach for effort [default: 0.2]
    #[arg(long)]
    pub effort_k: Option<f64>,
    /// Rank lines within each file instead of globally [default: false]
    #[arg(long)]
    pub per_file: bool,
}

#[derive(Args, Debug)]
pub struct SynthCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Output corpus (JSON lines)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BpeCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input corpus
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Target vocabulary size [default: 2048]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Output vocabulary file
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Input corpus
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Output split assignment (JSON)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Input corpus
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Vocabulary file
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    /// Split assignment; computed from the split flags when absent
    #[arg(long, value_name = "PATH")]
    pub splits: Option<PathBuf>,
    /// Output checkpoint
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Per-epoch training log (JSON lines)
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Args, Debug)]
pub struct PredictCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained checkpoint
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    /// Corpus to score
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Split assignment used to pick `--subset`
    #[arg(long, value_name = "PATH")]
    pub splits: Option<PathBuf>,
    /// Files to score [default: test with --splits, else all]
    #[arg(long, value_enum)]
    pub subset: Option<Subset>,
    /// Output scores (JSON lines of {path, scores})
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Scores: per-file {path, scores} or per-line {path, line, score} records
    #[arg(long, value_name = "PATH")]
    pub scores: PathBuf,
    /// Labelled corpus
    #[arg(long, alias = "corpus", value_name = "PATH")]
    pub labels: PathBuf,
    /// Split assignment used to pick `--subset`
    #[arg(long, value_name = "PATH")]
    pub splits: Option<PathBuf>,
    /// Files to evaluate [default: test with --splits, else all]
    #[arg(long, value_enum)]
    pub subset: Option<Subset>,
    /// Output report (JSON)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Ranked-lines export (JSON lines)
    #[arg(long, value_name = "PATH")]
    pub ranked: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Target vocabulary size [default: 2048]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Output directory for every artifact [default: pipeline-out]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, &self.seed);
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }
}

impl SynthArgs {
    fn apply(&self, s: &mut SyntheticSpec) {
        set(&mut s.n_files, &self.files);
        set(&mut s.lines_per_file, &self.lines);
        set(&mut s.defect_rate, &self.defect_rate);
        set(&mut s.n_projects, &self.projects);
    }
}

impl SplitArgs {
    fn apply(&self, s: &mut SplitConfig) {
        set(&mut s.kind, &self.split);
        set(&mut s.fractions.train, &self.train_fraction);
        set(&mut s.fractions.validation, &self.validation_fraction);
        set(&mut s.fractions.test, &self.test_fraction);
        set(&mut s.test_project, &self.test_project);
        set(&mut s.validation_project, &self.validation_project);
    }
}

impl ModelArgs {
    fn apply(&self, m: &mut ModelConfig) -> Result<()> {
        if let Some(o) = &self.objective {
            m.objective = o.parse()?;
        }
        set(&mut m.d_model, &self.d_model);
        set(&mut m.n_layers, &self.n_layers);
        set(&mut m.n_heads, &self.n_heads);
        set(&mut m.d_ff, &self.d_ff);
        set(&mut m.max_lines, &self.max_lines);
        set(&mut m.tokens_per_line, &self.tokens_per_line);
        set(&mut m.dropout, &self.dropout);
        set(&mut m.init_std, &self.init_std);
        if let Some(p) = &self.pool {
            m.pool = if p == "mean" {
                PoolKind::Mean
            } else {
                PoolKind::Concat
            };
        }
        Ok(())
    }
}

impl TrainArgs {
    fn apply(&self, t: &mut TrainConfig) -> Result<()> {
        set(&mut t.learning_rate, &self.learning_rate);
        set(&mut t.weight_decay, &self.weight_decay);
        set(&mut t.beta1, &self.beta1);
        set(&mut t.beta2, &self.beta2);
        set(&mut t.adam_eps, &self.adam_eps);
        set(&mut t.epochs, &self.epochs);
        set(&mut t.batch_size, &self.batch_size);
        set(&mut t.warmup_fraction, &self.warmup_fraction);
        set(&mut t.overlap, &self.overlap);
        if let Some(w) = self.defect_weight {
            t.class_weights[1] = w;
        }
        if let Some(p) = &self.precision {
            t.precision = p.parse()?;
        }
        Ok(())
    }
}

impl EvalArgs {
    fn apply(&self, e: &mut EvalParams) {
        set(&mut e.threshold, &self.threshold);
        set(&mut e.recall_k, &self.recall_k);
        set(&mut e.effort_k, &self.effort_k);
        e.per_file |= self.per_file;
    }
}

fn require_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn make_split(corpus: &Corpus, cfg: &RunConfig) -> Result<SplitAssignment> {
    let s = &cfg.split;
    match s.kind {
        SplitKind::Random => split_random(corpus, s.fractions, cfg.seed),
        SplitKind::Timewise => split_timewise(corpus, s.fractions),
        SplitKind::CrossProject => {
            split_cross_project(corpus, &s.test_project, &s.validation_project)
        }
    }
}

fn subset_of(
    corpus: &Corpus,
    split: Option<&SplitAssignment>,
    subset: Option<Subset>,
) -> Result<Corpus> {
    let subset = subset.unwrap_or(if split.is_some() {
        Subset::Test
    } else {
        Subset::All
    });
    let paths = match (subset, split) {
        (Subset::All, _) => return Ok(corpus.clone()),
        (_, None) => return Err(Error::invalid("--subset needs --splits")),
        (Subset::Train, Some(s)) => &s.train,
        (Subset::Validation, Some(s)) => &s.validation,
        (Subset::Test, Some(s)) => &s.test,
    };
    corpus.subset(paths)
}

fn load_split(path: &Option<PathBuf>) -> Result<Option<SplitAssignment>> {
    path.as_ref()
        .map(|p| {
            require_input(p)?;
            SplitAssignment::load(p)
        })
        .transpose()
}

fn run_synth(cmd: &SynthCmd) -> Result<()> {
    let mut cfg = cmd.common.resolve()?;
    cmd.synth.apply(&mut cfg.synthetic);
    let corpus = generate_synthetic(&cfg.synthetic, cfg.seed)?;
    corpus.save(&cmd.out)?;
    log::info!("wrote {} files to {}", corpus.len(), cmd.out.display());
    Ok(())
}

fn run_bpe(cmd: &BpeCmd) -> Result<()> {
    let mut cfg = cmd.common.resolve()?;
    set(&mut cfg.vocab_size, &cmd.vocab_size);
    require_input(&cmd.corpus)?;
    let vocab = train_bpe(&load_corpus(&cmd.corpus)?, cfg.vocab_size)?;
    save_vocab(&vocab, &cmd.out)?;
    log::info!("wrote {} tokens to {}", vocab.size(), cmd.out.display());
    Ok(())
}

fn run_split(cmd: &SplitCmd) -> Result<()> {
    let mut cfg = cmd.common.resolve()?;
    cmd.split.apply(&mut cfg.split);
    require_input(&cmd.corpus)?;
    let split = make_split(&load_corpus(&cmd.corpus)?, &cfg)?;
    split.save(&cmd.out)
}

fn run_train(cmd: &TrainCmd) -> Result<()> {
    let mut cfg = cmd.common.resolve()?;
    cmd.split.apply(&mut cfg.split);
    cmd.model.apply(&mut cfg.model)?;
    cmd.train.apply(&mut cfg.train)?;
    require_input(&cmd.corpus)?;
    require_input(&cmd.vocab)?;
    let corpus = load_corpus(&cmd.corpus)?;
    let vocab = load_vocab(&cmd.vocab)?;
    let split = match load_split(&cmd.splits)? {
        Some(s) => s,
        None => make_split(&corpus, &cfg)?,
    };
    cfg.model.vocab_size = vocab.size();
    let out = fit(
        &corpus.subset(&split.train)?,
        &corpus.subset(&split.validation)?,
        &vocab,
        &cfg.model,
        &cfg.train,
    )?;
    save_checkpoint(&out.checkpoint, &cmd.out)?;
    if let Some(log) = &cmd.log {
        save_training_log(&out.log, log)?;
    }
    Ok(())
}

fn run_predict(cmd: &PredictCmd) -> Result<()> {
    cmd.common.resolve()?;
    for p in [&cmd.checkpoint, &cmd.vocab, &cmd.corpus] {
        require_input(p)?;
    }
    let ckpt = load_checkpoint(&cmd.checkpoint)?;
    let vocab = load_vocab(&cmd.vocab)?;
    let split = load_split(&cmd.splits)?;
    let corpus = subset_of(&load_corpus(&cmd.corpus)?, split.as_ref(), cmd.subset)?;
    metrics::save_scores(&predict_corpus(&ckpt, &vocab, &corpus)?, &cmd.out)
}

fn run_evaluate(cmd: &EvaluateCmd) -> Result<()> {
    let mut cfg = cmd.common.resolve()?;
    cmd.eval.apply(&mut cfg.eval);
    require_input(&cmd.scores)?;
    require_input(&cmd.labels)?;
    let split = load_split(&cmd.splits)?;
    let corpus = subset_of(&load_corpus(&cmd.labels)?, split.as_ref(), cmd.subset)?;
    let scores = metrics::load_scores(&cmd.scores)?;
    let (report, ranked) = metrics::evaluate(&scores, &corpus, &cfg.eval)?;
    report.save(&cmd.out)?;
    if let Some(path) = &cmd.ranked {
        metrics::save_ranked(&ranked, path)?;
    }
    Ok(())
}

/// Artifact names inside a pipeline output directory.
pub mod artifacts {
    pub const CONFIG: &str = "config.toml";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const VOCAB: &str = "vocab.txt";
    pub const SPLITS: &str = "splits.json";
    pub const CHECKPOINT: &str = "model.lwck";
    pub const TRAINING_LOG: &str = "training_log.jsonl";
    pub const SCORES: &str = "test_scores.jsonl";
    pub const RANKED: &str = "ranked_lines.jsonl";
    pub const REPORT: &str = "report.json";
}

/// Runs the whole scenario for `cfg`, writing every artifact into `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cfg = cfg.clone();
    cfg.train.seed = cfg.seed;
    let corpus = generate_synthetic(&cfg.synthetic, cfg.seed)?;
    corpus.save(&out.join(artifacts::CORPUS))?;
    let vocab = train_bpe(&corpus, cfg.vocab_size)?;
    save_vocab(&vocab, &out.join(artifacts::VOCAB))?;
    cfg.model.vocab_size = vocab.size();
    crate::io::write_atomic(&out.join(artifacts::CONFIG), cfg.to_toml().as_bytes())?;
    let split = make_split(&corpus, &cfg)?;
    split.save(&out.join(artifacts::SPLITS))?;
    log::info!(
        "{} files, {} tokens, split {}/{}/{}",
        corpus.len(),
        vocab.size(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );

    let fitted = fit(
        &corpus.subset(&split.train)?,
        &corpus.subset(&split.validation)?,
        &vocab,
        &cfg.model,
        &cfg.train,
    )?;
    save_checkpoint(&fitted.checkpoint, &out.join(artifacts::CHECKPOINT))?;
    save_training_log(&fitted.log, &out.join(artifacts::TRAINING_LOG))?;

    let test = corpus.subset(&split.test)?;
    let scores = predict_corpus(&fitted.checkpoint, &vocab, &test)?;
    metrics::save_scores(&scores, &out.join(artifacts::SCORES))?;
    let (mut report, ranked) = metrics::evaluate(&scores, &test, &cfg.eval)?;
    report.config = Some(serde_json::to_value(&cfg).expect("run config serializes"));
    report.save(&out.join(artifacts::REPORT))?;
    metrics::save_ranked(&ranked, &out.join(artifacts::RANKED))?;
    Ok(report)
}

fn run_pipeline_cmd(cmd: &PipelineCmd) -> Result<()> {
    let mut cfg = cmd.common.resolve()?;
    cmd.synth.apply(&mut cfg.synthetic);
    cmd.split.apply(&mut cfg.split);
    cmd.model.apply(&mut cfg.model)?;
    cmd.train.apply(&mut cfg.train)?;
    cmd.eval.apply(&mut cfg.eval);
    set(&mut cfg.vocab_size, &cmd.vocab_size);
    let out = cmd
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("pipeline-out"));
    let report = run_pipeline(&cfg, &out)?;
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "balanced accuracy {}  AuROC {}  recall@top{}%LOC {}  effort@top{}%recall {}  IFA {}",
        show(report.balanced_accuracy),
        show(report.auroc),
        cfg.eval.recall_k * 100.0,
        show(report.recall_at_top_loc),
        cfg.eval.effort_k * 100.0,
        show(report.effort_at_top_recall),
        show(report.initial_false_alarm),
    );
    Ok(())
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Synth(c) => run_synth(c),
        Command::BpeTrain(c) => run_bpe(c),
        Command::Split(c) => run_split(c),
        Command::Train(c) => run_train(c),
        Command::Predict(c) => run_predict(c),
        Command::Evaluate(c) => run_evaluate(c),
        Command::Pipeline(c) => run_pipeline_cmd(c),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 for usage or validation errors, 2 for
/// runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
