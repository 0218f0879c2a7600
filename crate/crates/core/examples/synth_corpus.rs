//! Generate a corpus with planted defect patterns and write it as JSON lines.
//!
//!     cargo run --example synth_corpus -- [out.jsonl]

use hierdefect::corpus::{generate_synthetic, load_corpus, SyntheticSpec};

fn main() -> hierdefect::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("synthetic.jsonl"));
    let spec = SyntheticSpec {
        n_files: 200,
        ..Default::default()
    };
    let corpus = generate_synthetic(&spec, 7)?;
    corpus.save(&out)?;

    println!(
        "{} files, {} lines, {} defective ({:.2}%), projects {:?}",
        corpus.len(),
        corpus.n_lines(),
        corpus.n_defective(),
        100.0 * corpus.n_defective() as f64 / corpus.n_lines() as f64,
        corpus.projects()
    );
    let file = corpus
        .files
        .iter()
        .find(|f| f.n_defective() > 0)
        .expect("some defect");
    println!("\n{}:", file.path);
    for (line, label) in file.lines.iter().zip(&file.labels).take(12) {
        println!("  {} {line}", if *label == 1 { "!" } else { " " });
    }

    assert_eq!(load_corpus(&out)?, corpus);
    println!("\nwrote {}", out.display());
    Ok(())
}
