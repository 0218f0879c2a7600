//! Line-ranking metrics on a small hand-made example.
//!
//!     cargo run --example metrics

use hierdefect::metrics::*;

fn main() -> hierdefect::Result<()> {
    let scores = [0.9, 0.1, 0.7, 0.2, 0.2, 0.05, 0.6, 0.3, 0.01, 0.4];
    let labels = [1, 0, 0, 0, 1, 0, 1, 0, 0, 0];
    let lines: Vec<ScoredLine> = scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, label))| ScoredLine {
            path: "a.py".into(),
            line: i + 1,
            score,
            label,
        })
        .collect();

    let ranked = rank_lines(lines.clone())?;
    println!(
        "inspection order: {:?}",
        ranked.iter().map(|l| l.line).collect::<Vec<_>>()
    );
    println!(
        "balanced accuracy @0.5  {:?}",
        balanced_accuracy(&lines, 0.5)
    );
    println!("AuROC                   {:?}", auroc(&lines));
    println!(
        "recall @ top 20% LOC    {:?}",
        recall_at_top_loc(&ranked, 0.2)
    );
    println!(
        "effort @ top 20% recall {:?}",
        effort_at_top_recall(&ranked, 0.2)
    );
    println!("initial false alarm     {:?}", initial_false_alarm(&ranked));
    Ok(())
}
