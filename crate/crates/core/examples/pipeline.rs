//! Synthesize, tokenize, split, train, predict and evaluate in one call.
//! `--full` runs the default 2000-file scenario (several minutes in release).
//!
//!     cargo run --release --example pipeline -- [--full]

use hierdefect::cli::{run_pipeline, RunConfig};

fn main() -> hierdefect::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let mut cfg = RunConfig {
        seed: 1,
        ..Default::default()
    };
    cfg.train.epochs = if full { 2 } else { 6 };
    if !full {
        cfg.synthetic.n_files = 300;
        cfg.synthetic.lines_per_file = 32;
        cfg.model.max_lines = 32;
    }
    let out = std::env::temp_dir().join("hierdefect-pipeline");
    let report = run_pipeline(&cfg, &out)?;
    println!(
        "AuROC {:?}, recall@20%LOC {:?}, effort@20%recall {:?}, IFA {:?}",
        report.auroc,
        report.recall_at_top_loc,
        report.effort_at_top_recall,
        report.initial_false_alarm
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
