//! Learn a byte-pair vocabulary from a corpus, encode lines, and round-trip
//! the vocabulary file.
//!
//!     cargo run --example bpe_tokenizer

use hierdefect::corpus::{generate_synthetic, SyntheticSpec};
use hierdefect::tokenizer::{load_vocab, save_vocab, train_bpe, UNK_ID};

fn main() -> hierdefect::Result<()> {
    let corpus = generate_synthetic(
        &SyntheticSpec {
            n_files: 100,
            ..Default::default()
        },
        1,
    )?;
    let vocab = train_bpe(&corpus, 2048)?;
    println!(
        "{} tokens: {} base bytes, {} merges",
        vocab.size(),
        vocab.alphabet().len(),
        vocab.merges().len()
    );

    for line in ["total += count * 2", "return self.value", "zebra_quux(42)"] {
        let ids = vocab.encode_line(line);
        let pieces: Vec<String> = ids
            .iter()
            .map(|&id| match id {
                UNK_ID => "<unk>".to_string(),
                _ => String::from_utf8_lossy(vocab.token_bytes(id)).into_owned(),
            })
            .collect();
        println!("{line:?} -> {ids:?} {pieces:?}");
        println!(
            "  decoded {:?}",
            String::from_utf8_lossy(&vocab.decode(&ids))
        );
    }

    let path = std::env::temp_dir().join("vocab.txt");
    save_vocab(&vocab, &path)?;
    let back = load_vocab(&path)?;
    assert_eq!(back.content_hash(), vocab.content_hash());
    println!(
        "saved {} (sha256 {})",
        path.display(),
        &vocab.content_hash()[..16]
    );
    Ok(())
}
