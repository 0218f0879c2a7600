//! Cut a long file into overlapping fixed-shape windows and merge per-window
//! scores back onto source lines.
//!
//!     cargo run --example windowing

use hierdefect::corpus::SourceFile;
use hierdefect::corpus::{generate_synthetic, SyntheticSpec};
use hierdefect::preprocess::{encode_file, merge_window_scores, window_plan};
use hierdefect::tokenizer::train_bpe;

fn main() -> hierdefect::Result<()> {
    println!(
        "960 lines, L=512, overlap 64: {:?}",
        window_plan(960, 512, 64)?.ranges
    );

    let corpus = generate_synthetic(
        &SyntheticSpec {
            n_files: 20,
            ..Default::default()
        },
        5,
    )?;
    let vocab = train_bpe(&corpus, 500)?;
    let file = SourceFile::new(
        "long.py",
        (0..20)
            .map(|i| {
                [
                    "x = total",
                    "count += 1",
                    "return self.value",
                    "if not items:",
                ][i % 4]
                    .to_string()
            })
            .collect(),
        vec![0; 20],
    );
    let (rows, cols, overlap) = (8, 6, 3);
    let windows = encode_file(&vocab, &file, rows, cols, overlap)?;
    let plan = window_plan(file.n_lines(), rows, overlap)?;
    for (w, range) in windows.iter().zip(&plan.ranges) {
        println!(
            "window {:?}: {} real rows, first row ids {:?}, last real row ids {:?}",
            range,
            w.n_real_lines(),
            w.row_ids(0),
            w.row_ids(w.n_real_lines() - 1)
        );
    }

    // a fake scorer: each window rates its rows by position
    let per_window: Vec<_> = windows
        .iter()
        .map(|w| {
            (
                w.origin.clone(),
                (0..rows).map(|r| r as f64 / rows as f64).collect(),
            )
        })
        .collect();
    let merged = merge_window_scores(&per_window, &plan, file.n_lines())?;
    println!("merged scores: {:.3?}", merged);
    Ok(())
}
