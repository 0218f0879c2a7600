//! Byte-pair-encoding tokenizer trained on corpus lines.
//!
//! Lines are cut into whitespace-free chunks plus one symbol per whitespace byte;
//! merges never cross a chunk boundary. The base alphabet is the set of bytes
//! observed during training. Ids 0 and 1 are reserved for PAD and UNK.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const DEFAULT_VOCAB_SIZE: usize = 2048;

const HEADER: &str = "bpe-vocab v1";
const HEADER_PREFIX: &str = "bpe-vocab ";
const SEPARATOR: &str = "--";
const PAD_TEXT: &str = "<pad>";
const UNK_TEXT: &str = "<unk>";

#[derive(Clone, Debug)]
pub struct Vocabulary {
    merges: Vec<(Vec<u8>, Vec<u8>)>,
    /// Byte strings by id. Entries 0 and 1 are the specials and hold no bytes.
    tokens: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, u32>,
    alphabet: Vec<u8>,
    byte_ids: [u32; 256],
    merge_table: HashMap<(u32, u32), (usize, u32)>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        // everything else is derived from these three
        self.merges == other.merges
            && self.tokens == other.tokens
            && self.alphabet == other.alphabet
    }
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Whitespace-free runs, and each whitespace byte on its own.
fn chunks(line: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut rest = line;
    std::iter::from_fn(move || {
        let first = *rest.first()?;
        let len = if is_ws(first) {
            1
        } else {
            rest.iter().position(|&b| is_ws(b)).unwrap_or(rest.len())
        };
        let (head, tail) = rest.split_at(len);
        rest = tail;
        Some(head)
    })
}

impl Vocabulary {
    fn with_alphabet(alphabet: Vec<u8>) -> Self {
        let mut v = Vocabulary {
            merges: Vec::new(),
            tokens: vec![Vec::new(), Vec::new()],
            token_to_id: HashMap::new(),
            alphabet: Vec::new(),
            byte_ids: [UNK_ID; 256],
            merge_table: HashMap::new(),
        };
        for b in alphabet {
            let id = v.intern(vec![b]);
            v.byte_ids[b as usize] = id;
            v.alphabet.push(b);
        }
        v
    }

    fn intern(&mut self, bytes: Vec<u8>) -> u32 {
        if let Some(&id) = self.token_to_id.get(&bytes) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.token_to_id.insert(bytes.clone(), id);
        self.tokens.push(bytes);
        id
    }

    fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let l = self.tokens[left as usize].clone();
        let r = self.tokens[right as usize].clone();
        let mut joined = l.clone();
        joined.extend_from_slice(&r);
        let out = self.intern(joined);
        let rank = self.merges.len();
        self.merge_table.entry((left, right)).or_insert((rank, out));
        self.merges.push((l, r));
        out
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[u8] {
        &self.alphabet
    }

    pub fn id_of(&self, token: &[u8]) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Bytes of a token; empty for the special ids.
    pub fn token_bytes(&self, id: u32) -> &[u8] {
        &self.tokens[id as usize]
    }

    /// Concatenated token bytes. UNK and PAD contribute nothing.
    pub fn decode(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter()
            .flat_map(|&id| self.token_bytes(id).iter().copied())
            .collect()
    }

    pub fn encode_line(&self, line: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in chunks(line.as_bytes()) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = chunk.iter().map(|&b| self.byte_ids[b as usize]).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|w| {
                    self.merge_table
                        .get(&(w[0], w[1]))
                        .map(|&(rank, _)| (rank, w[0], w[1]))
                })
                .min();
            let Some((_, l, r)) = best else { break };
            let (_, merged) = self.merge_table[&(l, r)];
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms);
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{}\t{}", escape(l), escape(r));
        }
        s.push_str(SEPARATOR);
        s.push('\n');
        let _ = writeln!(s, "{PAD_TEXT}\t{PAD_ID}");
        let _ = writeln!(s, "{UNK_TEXT}\t{UNK_ID}");
        for &b in &self.alphabet {
            let _ = writeln!(s, "{}\t{}", escape(&[b]), self.byte_ids[b as usize]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            what: "vocabulary",
            reason,
        };
        let Some(first) = text.lines().next() else {
            return Err(corrupt("empty file".into()));
        };
        if first != HEADER {
            return Err(match first.strip_prefix(HEADER_PREFIX) {
                Some(v) => Error::Version {
                    what: "vocabulary",
                    found: v.to_string(),
                },
                None => corrupt(format!("bad header `{first}`")),
            });
        }
        if !text.ends_with('\n') {
            return Err(corrupt("truncated final line".into()));
        }
        let body: Vec<&str> = text.lines().skip(1).collect();
        let sep = body
            .iter()
            .position(|&l| l == SEPARATOR)
            .ok_or_else(|| corrupt("missing `--` separator".into()))?;
        let (merge_lines, rows) = (&body[..sep], &body[sep + 1..]);

        let mut specials_seen = 0;
        let mut alphabet = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let (tok, id) = row
                .split_once('\t')
                .ok_or_else(|| corrupt(format!("bad token row `{row}`")))?;
            let id: usize = id
                .parse()
                .map_err(|_| corrupt(format!("bad id in `{row}`")))?;
            if id != i {
                return Err(corrupt(format!("ids not dense at row `{row}`")));
            }
            match i {
                0 if tok == PAD_TEXT => specials_seen += 1,
                1 if tok == UNK_TEXT => specials_seen += 1,
                0 | 1 => return Err(corrupt(format!("expected special token at id {i}"))),
                _ => {
                    let bytes = unescape(tok).map_err(corrupt)?;
                    match bytes.as_slice() {
                        [b] if alphabet.last().is_none_or(|&p| p < *b) => alphabet.push(*b),
                        _ => return Err(corrupt(format!("bad alphabet row `{row}`"))),
                    }
                }
            }
        }
        if specials_seen != 2 {
            return Err(corrupt("missing special tokens".into()));
        }

        let mut v = Vocabulary::with_alphabet(alphabet);
        for line in merge_lines {
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| corrupt(format!("bad merge line `{line}`")))?;
            let (l, r) = (unescape(l).map_err(corrupt)?, unescape(r).map_err(corrupt)?);
            let lid = v.id_of(&l);
            let rid = v.id_of(&r);
            match (lid, rid) {
                (Some(a), Some(b)) => {
                    v.push_merge(a, b);
                }
                _ => return Err(corrupt(format!("merge `{line}` uses unknown tokens"))),
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Vocabulary::from_text(&io::read_to_string(path)?)
    }

    /// Hex SHA-256 of the serialized vocabulary; checkpoints record it.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn save_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    vocab.save(path)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path)
}

/// Learns merges from every line of `corpus` until the vocabulary holds
/// `target_vocab_size` tokens or no pair occurs at least twice.
pub fn train_bpe(corpus: &Corpus, target_vocab_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut chunk_counts: HashMap<&[u8], usize> = HashMap::new();
    let mut seen = [false; 256];
    for line in corpus.files.iter().flat_map(|f| &f.lines) {
        for &b in line.as_bytes() {
            seen[b as usize] = true;
        }
        for c in chunks(line.as_bytes()) {
            if c.len() > 1 {
                *chunk_counts.entry(c).or_default() += 1;
            }
        }
    }
    let alphabet: Vec<u8> = (0..=255u8).filter(|&b| seen[b as usize]).collect();
    let base = alphabet.len() + 2;
    if target_vocab_size <= base {
        return Err(Error::invalid(format!(
            "target vocabulary size {target_vocab_size} must exceed base size {base}"
        )));
    }
    let mut vocab = Vocabulary::with_alphabet(alphabet);

    let mut words: Vec<(Vec<u32>, usize)> = {
        let mut sorted: Vec<_> = chunk_counts.into_iter().collect();
        sorted.sort();
        sorted
            .into_iter()
            .map(|(c, n)| (c.iter().map(|&b| vocab.byte_ids[b as usize]).collect(), n))
            .collect()
    };

    while vocab.size() < target_vocab_size {
        let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best =
            pair_counts
                .into_iter()
                .filter(|&(_, n)| n >= 2)
                .min_by(|&(pa, na), &(pb, nb)| {
                    nb.cmp(&na).then_with(|| {
                        let key = |(l, r): (u32, u32)| {
                            let mut joined = vocab.tokens[l as usize].clone();
                            joined.extend_from_slice(&vocab.tokens[r as usize]);
                            (joined, vocab.tokens[l as usize].clone())
                        };
                        key(pa).cmp(&key(pb))
                    })
                });
        let Some(((l, r), _)) = best else { break };
        let merged = vocab.push_merge(l, r);
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    Ok(vocab)
}

/// Token text for the vocabulary file. Backslash, tab, newline, carriage return
/// and space are escaped, as are other control bytes and invalid UTF-8.
fn escape(bytes: &[u8]) -> String {
    let mut s = String::new();
    for chunk in bytes.utf8_chunks() {
        for c in chunk.valid().chars() {
            match c {
                '\\' => s.push_str("\\\\"),
                '\t' => s.push_str("\\t"),
                '\n' => s.push_str("\\n"),
                '\r' => s.push_str("\\r"),
                ' ' => s.push_str("\\s"),
                c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                    let _ = write!(s, "\\x{:02x}", c as u32);
                }
                c => s.push(c),
            }
        }
        for b in chunk.invalid() {
            let _ = write!(s, "\\x{b:02x}");
        }
    }
    s
}

fn unescape(text: &str) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut it = text.bytes();
    while let Some(b) = it.next() {
        if b != b'\\' {
            out.push(b);
            continue;
        }
        match it.next() {
            Some(b'\\') => out.push(b'\\'),
            Some(b't') => out.push(b'\t'),
            Some(b'n') => out.push(b'\n'),
            Some(b'r') => out.push(b'\r'),
            Some(b's') => out.push(b' '),
            Some(b'x') => {
                let hi = it.next();
                let lo = it.next();
                let hex = [hi, lo]
                    .into_iter()
                    .collect::<Option<Vec<u8>>>()
                    .and_then(|h| u8::from_str_radix(std::str::from_utf8(&h).ok()?, 16).ok());
                out.push(hex.ok_or_else(|| format!("bad \\x escape in `{text}`"))?);
            }
            _ => return Err(format!("bad escape in `{text}`")),
        }
    }
    if out.is_empty() {
        return Err("empty token".into());
    }
    Ok(out)
}
