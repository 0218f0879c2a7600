//! The three ways of dividing a corpus into train / validation / test.
//!
//!     cargo run --example split_corpus

use hierdefect::corpus::{
    generate_synthetic, split_cross_project, split_random, split_timewise, SplitFractions,
    SyntheticSpec,
};

fn main() -> hierdefect::Result<()> {
    let mut corpus = generate_synthetic(
        &SyntheticSpec {
            n_files: 50,
            n_projects: 3,
            ..Default::default()
        },
        3,
    )?;
    // synthetic files carry no commit times; pretend they arrived in reverse path order
    let n = corpus.files.len() as i64;
    for (i, f) in corpus.files.iter_mut().enumerate() {
        f.timestamp = Some(n - i as i64);
    }
    let fractions = SplitFractions::new(0.8, 0.1, 0.1)?;

    let random = split_random(&corpus, fractions, 42)?;
    println!("random:        {:?}", random.total());
    println!("  test files   {:?}", &random.test[..3]);

    let timewise = split_timewise(&corpus, fractions)?;
    println!(
        "timewise:      {:?}",
        (
            timewise.train.len(),
            timewise.validation.len(),
            timewise.test.len()
        )
    );
    println!("  newest files {:?}", &timewise.test[..3]);

    let cross = split_cross_project(&corpus, "project0", "project1")?;
    println!(
        "cross-project: train {} / validation {} / test {}",
        cross.train.len(),
        cross.validation.len(),
        cross.test.len()
    );
    Ok(())
}
