//! Fit a small model on a synthetic corpus, keep the best epoch by
//! validation AuROC, and save the checkpoint and training log.
//!
//!     cargo run --release --example train -- [out-dir]

use hierdefect::corpus::{generate_synthetic, split_random, SplitFractions, SyntheticSpec};
use hierdefect::model::ModelConfig;
use hierdefect::tokenizer::{save_vocab, train_bpe};
use hierdefect::train::{fit, save_checkpoint, save_training_log, TrainConfig};

fn main() -> hierdefect::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("hierdefect-train"));
    std::fs::create_dir_all(&out).map_err(|e| hierdefect::Error::io(&out, e))?;

    let spec = SyntheticSpec {
        n_files: 300,
        lines_per_file: 32,
        ..Default::default()
    };
    let corpus = generate_synthetic(&spec, 11)?;
    let vocab = train_bpe(&corpus, 2048)?;
    let split = split_random(&corpus, SplitFractions::new(0.8, 0.1, 0.1)?, 11)?;

    let model = ModelConfig {
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        max_lines: 32,
        vocab_size: vocab.size(),
        ..Default::default()
    };
    let train = TrainConfig {
        epochs: 8,
        seed: 11,
        ..Default::default()
    };
    let fitted = fit(
        &corpus.subset(&split.train)?,
        &corpus.subset(&split.validation)?,
        &vocab,
        &model,
        &train,
    )?;
    for r in &fitted.log {
        println!(
            "epoch {}: train loss {:.4}, validation loss {:.4}, validation AuROC {:?}",
            r.epoch, r.train_loss, r.validation_loss, r.validation_auroc
        );
    }
    println!("kept epoch {}", fitted.checkpoint.epoch);

    save_vocab(&vocab, &out.join("vocab.txt"))?;
    save_checkpoint(&fitted.checkpoint, &out.join("model.lwck"))?;
    save_training_log(&fitted.log, &out.join("training_log.jsonl"))?;
    corpus.save(&out.join("corpus.jsonl"))?;
    split.save(&out.join("splits.json"))?;
    println!("artifacts in {}", out.display());
    Ok(())
}
