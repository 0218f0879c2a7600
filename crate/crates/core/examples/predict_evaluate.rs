//! Score held-out files with a saved checkpoint and report the ranking
//! metrics. Run the `train` example first (same out-dir).
//!
//!     cargo run --release --example train
//!     cargo run --release --example predict_evaluate -- [out-dir]

use hierdefect::corpus::{load_corpus, SplitAssignment};
use hierdefect::metrics::{evaluate, EvalParams};
use hierdefect::tokenizer::load_vocab;
use hierdefect::train::{load_checkpoint, predict_corpus};

fn main() -> hierdefect::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("hierdefect-train"));
    let ckpt = load_checkpoint(&dir.join("model.lwck"))?;
    let vocab = load_vocab(&dir.join("vocab.txt"))?;
    let corpus = load_corpus(&dir.join("corpus.jsonl"))?;
    let split = SplitAssignment::load(&dir.join("splits.json"))?;
    let test = corpus.subset(&split.test)?;

    let scores = predict_corpus(&ckpt, &vocab, &test)?;
    let (report, ranked) = evaluate(&scores, &test, &EvalParams::default())?;
    print!("{}", report.to_json());

    println!("\nfirst lines to inspect:");
    for r in ranked.iter().take(8) {
        let text = &test.files.iter().find(|f| f.path == r.path).unwrap().lines[r.line - 1];
        println!(
            "  #{:<3} {:.3} {} {}:{}  {text}",
            r.rank,
            r.score,
            if r.label == 1 { "!" } else { " " },
            r.path,
            r.line
        );
    }
    Ok(())
}
