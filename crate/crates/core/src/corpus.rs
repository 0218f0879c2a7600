//! Labeled source files: loading, validation, dataset splits and a planted-defect
//! synthetic generator.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// One source document with a defect flag per line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub lines: Vec<String>,
    pub labels: Vec<u8>,
    #[serde(default)]
    pub project: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, lines: Vec<String>, labels: Vec<u8>) -> Self {
        SourceFile {
            path: path.into(),
            lines,
            labels,
            project: String::new(),
            timestamp: None,
        }
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_defective(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lines.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                file: self.path.clone(),
                lines: self.lines.len(),
                labels: self.labels.len(),
            });
        }
        if self.lines.is_empty() {
            return Err(Error::EmptyFile(self.path.clone()));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!(
                "file `{}` has label {bad}, expected 0 or 1",
                self.path
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub files: Vec<SourceFile>,
}

impl Corpus {
    /// Builds a corpus, checking every file and rejecting duplicate paths.
    pub fn new(name: impl Into<String>, files: Vec<SourceFile>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &files {
            f.validate()?;
            if !seen.insert(f.path.as_str()) {
                return Err(Error::DuplicatePath(f.path.clone()));
            }
        }
        Ok(Corpus {
            name: name.into(),
            files,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn n_lines(&self) -> usize {
        self.files.iter().map(SourceFile::n_lines).sum()
    }

    pub fn n_defective(&self) -> usize {
        self.files.iter().map(SourceFile::n_defective).sum()
    }

    pub fn paths(&self) -> Vec<String> {
        self.files.iter().map(|f| f.path.clone()).collect()
    }

    pub fn projects(&self) -> BTreeSet<&str> {
        self.files.iter().map(|f| f.project.as_str()).collect()
    }

    /// Files named in `paths`, in the order given.
    pub fn subset(&self, paths: &[String]) -> Result<Corpus> {
        let index: HashMap<&str, &SourceFile> =
            self.files.iter().map(|f| (f.path.as_str(), f)).collect();
        let files = paths
            .iter()
            .map(|p| {
                index
                    .get(p.as_str())
                    .map(|f| (*f).clone())
                    .ok_or_else(|| Error::invalid(format!("path `{p}` not in corpus")))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(self.name.clone(), files)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            out.push_str(&serde_json::to_string(f).expect("source file serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Reads a JSONL corpus, one file record per line. Blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = io::read_to_string(path)?;
    parse_corpus(&text, path)
}

pub fn parse_corpus(text: &str, origin: &Path) -> Result<Corpus> {
    let mut files = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let file: SourceFile = serde_json::from_str(raw).map_err(|e| Error::MalformedRecord {
            path: origin.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        files.push(file);
    }
    let name = origin
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, files)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = SplitFractions {
            train,
            validation,
            test,
        };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!(
                "split fractions must be > 0: {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "split fractions must sum to 1: {parts:?}"
            )));
        }
        Ok(())
    }

    /// (train, validation, test) counts for `n` items. Validation and test get the
    /// floor of their share; train gets the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        // the slack absorbs products like 0.29 * 100 = 28.999999999999996
        let share = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let n_val = share(self.validation);
        let n_test = share(self.test).min(n - n_val);
        (n - n_val - n_test, n_val, n_test)
    }
}

fn partition_ordered(ordered: Vec<String>, fractions: &SplitFractions) -> SplitAssignment {
    let (n_train, n_val, _) = fractions.counts(ordered.len());
    let mut it = ordered.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let validation = it.by_ref().take(n_val).collect();
    let test = it.collect();
    SplitAssignment {
        train,
        validation,
        test,
    }
}

/// Seeded shuffle of the corpus paths, then train / validation / test blocks.
pub fn split_random(
    corpus: &Corpus,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut paths = corpus.paths();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    paths.shuffle(&mut rng);
    Ok(partition_ordered(paths, &fractions))
}

/// Oldest files train, newest files test. Ties on timestamp are ordered by path.
pub fn split_timewise(corpus: &Corpus, fractions: SplitFractions) -> Result<SplitAssignment> {
    fractions.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut stamped = corpus
        .files
        .iter()
        .map(|f| {
            f.timestamp
                .map(|t| (t, f.path.clone()))
                .ok_or_else(|| Error::MissingTimestamp(f.path.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    stamped.sort();
    Ok(partition_ordered(
        stamped.into_iter().map(|(_, p)| p).collect(),
        &fractions,
    ))
}

/// Whole projects held out: one for testing, one for validation, the rest train.
pub fn split_cross_project(
    corpus: &Corpus,
    test_project: &str,
    validation_project: &str,
) -> Result<SplitAssignment> {
    if test_project == validation_project {
        return Err(Error::invalid(format!(
            "test and validation project are both `{test_project}`"
        )));
    }
    let projects = corpus.projects();
    for p in [test_project, validation_project] {
        if !projects.contains(p) {
            return Err(Error::UnknownProject(p.to_string()));
        }
    }
    let mut split = SplitAssignment::default();
    for f in &corpus.files {
        let bucket = if f.project == test_project {
            &mut split.test
        } else if f.project == validation_project {
            &mut split.validation
        } else {
            &mut split.train
        };
        bucket.push(f.path.clone());
    }
    Ok(split)
}

/// Parameters of a planted-defect corpus. Defective lines carry one of the
/// trigger patterns; clean lines never contain any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_files: usize,
    pub lines_per_file: usize,
    pub defect_rate: f64,
    pub trigger_patterns: Vec<Vec<String>>,
    pub vocabulary_pool: Vec<String>,
    pub n_projects: usize,
    /// Inclusive range of filler tokens per line.
    pub min_fill: usize,
    pub max_fill: usize,
}

const DEFAULT_POOL: &[&str] = &[
    "x",
    "y",
    "i",
    "n",
    "=",
    "+",
    "-",
    "*",
    "+=",
    "==",
    "<",
    ">",
    "0",
    "1",
    "2",
    "if",
    "else:",
    "for",
    "in",
    "while",
    "return",
    "not",
    "and",
    "or",
    "def",
    "self.value",
    "count",
    "total",
    "items",
    "result",
    "data[i]",
    "len(items)",
    "print(x)",
    "append(y)",
    "range(n):",
    "None",
    "True",
    "False",
    "import",
    "os",
    "path",
    "name",
    "config",
    "key",
    "value",
    "args",
    "kwargs",
    "try:",
    "except",
    "pass",
    "break",
    "continue",
    "lambda",
    "dict()",
    "list()",
    "str(x)",
    "open(path)",
    "close()",
    "index",
    "offset",
    "buffer",
];

const DEFAULT_TRIGGERS: &[&[&str]] = &[
    &["eval(", "user_input)"],
    &["strcpy(dst,", "src)"],
    &["free(ptr);", "use(ptr)"],
    &["while", "True:", "pass"],
];

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_files: 100,
            lines_per_file: 64,
            defect_rate: 0.03,
            trigger_patterns: DEFAULT_TRIGGERS
                .iter()
                .map(|p| p.iter().map(|s| s.to_string()).collect())
                .collect(),
            vocabulary_pool: DEFAULT_POOL.iter().map(|s| s.to_string()).collect(),
            n_projects: 4,
            min_fill: 2,
            max_fill: 5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_files == 0 || self.lines_per_file == 0 || self.n_projects == 0 {
            return Err(Error::invalid(
                "n_files, lines_per_file and n_projects must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.defect_rate) {
            return Err(Error::invalid(format!(
                "defect_rate {} outside [0, 1]",
                self.defect_rate
            )));
        }
        if self.trigger_patterns.is_empty() || self.trigger_patterns.iter().any(Vec::is_empty) {
            return Err(Error::invalid("trigger_patterns must be non-empty"));
        }
        if self.vocabulary_pool.is_empty() {
            return Err(Error::invalid("vocabulary_pool must be non-empty"));
        }
        if self.min_fill == 0 || self.min_fill > self.max_fill {
            return Err(Error::invalid("need 1 <= min_fill <= max_fill"));
        }
        let all_tokens = self.trigger_patterns.iter().chain([&self.vocabulary_pool]);
        for tok in all_tokens.flatten() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "token `{tok}` must be non-empty and whitespace-free"
                )));
            }
        }
        Ok(())
    }

    /// True if `line` contains some trigger pattern as a contiguous run of
    /// whitespace-separated tokens.
    pub fn contains_trigger(&self, line: &str) -> bool {
        let words: Vec<&str> = line.split_whitespace().collect();
        self.trigger_patterns.iter().any(|pat| {
            words
                .windows(pat.len())
                .any(|w| w.iter().zip(pat).all(|(a, b)| *a == b.as_str()))
        })
    }
}

const BASE_TIMESTAMP: i64 = 1_600_000_000;

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = spec.n_files * spec.lines_per_file;
    let n_defective = (spec.defect_rate * total as f64).round() as usize;
    let mut defective = vec![false; total];
    for idx in rand::seq::index::sample(&mut rng, total, n_defective.min(total)) {
        defective[idx] = true;
    }

    let mut files = Vec::with_capacity(spec.n_files);
    for fi in 0..spec.n_files {
        let mut lines = Vec::with_capacity(spec.lines_per_file);
        let mut labels = Vec::with_capacity(spec.lines_per_file);
        for li in 0..spec.lines_per_file {
            let bad = defective[fi * spec.lines_per_file + li];
            lines.push(synth_line(spec, bad, &mut rng)?);
            labels.push(bad as u8);
        }
        files.push(SourceFile {
            path: format!("project{}/file{:05}.py", fi % spec.n_projects, fi),
            lines,
            labels,
            project: format!("project{}", fi % spec.n_projects),
            timestamp: Some(BASE_TIMESTAMP + 60 * fi as i64),
        });
    }
    Corpus::new("synthetic", files)
}

fn synth_line(spec: &SyntheticSpec, defective: bool, rng: &mut ChaCha8Rng) -> Result<String> {
    const MAX_ATTEMPTS: usize = 1000;
    for _ in 0..MAX_ATTEMPTS {
        let n_fill = rng.gen_range(spec.min_fill..=spec.max_fill);
        let mut words: Vec<&str> = (0..n_fill)
            .map(|_| spec.vocabulary_pool[rng.gen_range(0..spec.vocabulary_pool.len())].as_str())
            .collect();
        if defective {
            let pat = &spec.trigger_patterns[rng.gen_range(0..spec.trigger_patterns.len())];
            let at = rng.gen_range(0..=words.len());
            words.splice(at..at, pat.iter().map(String::as_str));
        }
        let line = words.join(" ");
        // filler can recreate a pattern by chance; clean lines must not contain one
        if defective || !spec.contains_trigger(&line) {
            return Ok(line);
        }
    }
    Err(Error::invalid(
        "vocabulary_pool keeps producing trigger patterns on clean lines",
    ))
}
