//! Global line ranking and the five line-level effectiveness measures.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLine {
    pub path: String,
    /// 1-based.
    pub line: usize,
    pub score: f64,
    pub label: u8,
}

/// Line probabilities for one file, in line order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileScores {
    pub path: String,
    pub scores: Vec<f64>,
}

/// One row of the ranked-lines export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedLine {
    pub path: String,
    pub line: usize,
    pub score: f64,
    pub label: u8,
    /// 1-based position in the ranking.
    pub rank: usize,
}

fn check_lines(lines: &[ScoredLine]) -> Result<()> {
    if lines.is_empty() {
        return Err(Error::invalid("nothing to rank"));
    }
    let mut seen = HashSet::with_capacity(lines.len());
    for l in lines {
        if !(0.0..=1.0).contains(&l.score) {
            return Err(Error::invalid(format!(
                "{}:{} has score {} outside [0, 1]",
                l.path, l.line, l.score
            )));
        }
        if l.label > 1 {
            return Err(Error::invalid(format!(
                "{}:{} has label {}",
                l.path, l.line, l.label
            )));
        }
        if !seen.insert((l.path.as_str(), l.line)) {
            return Err(Error::invalid(format!(
                "duplicate line {}:{}",
                l.path, l.line
            )));
        }
    }
    Ok(())
}

/// Descending score; ties ascending by (path, line).
pub fn rank_lines(mut lines: Vec<ScoredLine>) -> Result<Vec<ScoredLine>> {
    check_lines(&lines)?;
    lines.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.path.cmp(&b.path))
            .then_with(|| a.line.cmp(&b.line))
    });
    Ok(lines)
}

fn class_counts(lines: &[ScoredLine]) -> (usize, usize) {
    let pos = lines.iter().filter(|l| l.label == 1).count();
    (pos, lines.len() - pos)
}

/// Mean of true-positive and true-negative rates; positive means `score >= threshold`.
/// `None` unless both classes are present.
pub fn balanced_accuracy(lines: &[ScoredLine], threshold: f64) -> Option<f64> {
    let (pos, neg) = class_counts(lines);
    if pos == 0 || neg == 0 {
        return None;
    }
    let tp = lines
        .iter()
        .filter(|l| l.label == 1 && l.score >= threshold)
        .count();
    let tn = lines
        .iter()
        .filter(|l| l.label == 0 && l.score < threshold)
        .count();
    Some((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

/// Mann-Whitney estimate with tied pairs counted as one half.
pub fn auroc(lines: &[ScoredLine]) -> Option<f64> {
    let (pos, neg) = class_counts(lines);
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<&ScoredLine> = lines.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    // sum of midranks of the positives, in half units to stay integral
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        let twice_midrank = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|l| l.label == 1).count() as u128;
        twice_rank_sum += twice_midrank * positives;
        i = j;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Some(twice_u as f64 / 2.0 / (pos as f64 * neg as f64))
}

fn top_count(k: f64, n: usize) -> usize {
    ((k * n as f64 + 1e-9).floor() as usize).max(1).min(n)
}

fn recall_target(k: f64, d: usize) -> usize {
    ((k * d as f64 - 1e-9).ceil() as usize).clamp(1, d)
}

/// Fraction of all defective lines found in the first `max(1, floor(k n))`
/// ranked lines. `ranked` must come from [`rank_lines`]; `k` in (0, 1].
pub fn recall_at_top_loc(ranked: &[ScoredLine], k: f64) -> Option<f64> {
    let (d, _) = class_counts(ranked);
    if d == 0 {
        return None;
    }
    let m = top_count(k, ranked.len());
    let found = ranked[..m].iter().filter(|l| l.label == 1).count();
    Some(found as f64 / d as f64)
}

/// Share of the ranking inspected to reach `ceil(k d)` defective lines.
pub fn effort_at_top_recall(ranked: &[ScoredLine], k: f64) -> Option<f64> {
    let (d, _) = class_counts(ranked);
    if d == 0 {
        return None;
    }
    let target = recall_target(k, d);
    let mut found = 0;
    for (i, l) in ranked.iter().enumerate() {
        found += l.label as usize;
        if found == target {
            return Some((i + 1) as f64 / ranked.len() as f64);
        }
    }
    unreachable!("target never exceeds the defective count")
}

/// Clean lines ranked before the first defective one, over all lines.
pub fn initial_false_alarm(ranked: &[ScoredLine]) -> Option<f64> {
    let first = ranked.iter().position(|l| l.label == 1)?;
    Some(first as f64 / ranked.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub threshold: f64,
    pub recall_k: f64,
    pub effort_k: f64,
    /// Rank within each file and average the ranking measures over files,
    /// instead of one global ranking.
    pub per_file: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            threshold: 0.5,
            recall_k: 0.2,
            effort_k: 0.2,
            per_file: false,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("recall_k", self.recall_k), ("effort_k", self.effort_k)] {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::invalid(format!("{name} = {k} outside (0, 1]")));
            }
        }
        if !self.threshold.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tool_version: String,
    pub balanced_accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub recall_at_top_loc: Option<f64>,
    pub effort_at_top_recall: Option<f64>,
    pub initial_false_alarm: Option<f64>,
    /// Why each null metric is undefined.
    pub undefined: BTreeMap<String, String>,
    pub n_lines: usize,
    pub n_defective: usize,
    pub n_files: usize,
    pub params: EvalParams,
    /// Free-form echo of the run configuration that produced the scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            what: "metrics report",
            reason: e.to_string(),
        })
    }
}

/// Joins predictions with the corpus labels. Every line of every file must be
/// scored exactly once.
pub fn scored_lines(predictions: &[FileScores], corpus: &Corpus) -> Result<Vec<ScoredLine>> {
    let mut by_path: HashMap<&str, &FileScores> = HashMap::new();
    for p in predictions {
        if by_path.insert(p.path.as_str(), p).is_some() {
            return Err(Error::Coverage(format!("{} is scored twice", p.path)));
        }
    }
    let mut out = Vec::with_capacity(corpus.n_lines());
    for f in &corpus.files {
        let p = by_path
            .remove(f.path.as_str())
            .ok_or_else(|| Error::Coverage(format!("no scores for {}", f.path)))?;
        if p.scores.len() != f.n_lines() {
            return Err(Error::Coverage(format!(
                "{} has {} lines but {} scores",
                f.path,
                f.n_lines(),
                p.scores.len()
            )));
        }
        for (i, (&score, &label)) in p.scores.iter().zip(&f.labels).enumerate() {
            out.push(ScoredLine {
                path: f.path.clone(),
                line: i + 1,
                score,
                label,
            });
        }
    }
    if let Some(extra) = by_path.keys().min() {
        return Err(Error::Coverage(format!(
            "{extra} is not in the labelled corpus"
        )));
    }
    Ok(out)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Computes every measure over the pooled lines of `corpus`, returning the
/// report and the global ranking export.
pub fn evaluate(
    predictions: &[FileScores],
    corpus: &Corpus,
    params: &EvalParams,
) -> Result<(MetricsReport, Vec<RankedLine>)> {
    params.validate()?;
    let lines = scored_lines(predictions, corpus)?;
    let ranked = rank_lines(lines)?;
    let (n_defective, _) = class_counts(&ranked);

    let (recall, effort, ifa) = if params.per_file {
        let mut groups: BTreeMap<&str, Vec<ScoredLine>> = BTreeMap::new();
        for l in &ranked {
            groups.entry(l.path.as_str()).or_default().push(l.clone());
        }
        let groups: Vec<&Vec<ScoredLine>> = groups.values().collect();
        (
            mean_defined(groups.iter().map(|g| recall_at_top_loc(g, params.recall_k))),
            mean_defined(
                groups
                    .iter()
                    .map(|g| effort_at_top_recall(g, params.effort_k)),
            ),
            mean_defined(groups.iter().map(|g| initial_false_alarm(g))),
        )
    } else {
        (
            recall_at_top_loc(&ranked, params.recall_k),
            effort_at_top_recall(&ranked, params.effort_k),
            initial_false_alarm(&ranked),
        )
    };

    let mut report = MetricsReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        balanced_accuracy: balanced_accuracy(&ranked, params.threshold),
        auroc: auroc(&ranked),
        recall_at_top_loc: recall,
        effort_at_top_recall: effort,
        initial_false_alarm: ifa,
        undefined: BTreeMap::new(),
        n_lines: ranked.len(),
        n_defective,
        n_files: corpus.len(),
        params: params.clone(),
        config: None,
    };
    let single_class = if n_defective == 0 {
        "no defective lines"
    } else {
        "no clean lines"
    };
    for (name, value) in [
        ("balanced_accuracy", report.balanced_accuracy),
        ("auroc", report.auroc),
        ("recall_at_top_loc", report.recall_at_top_loc),
        ("effort_at_top_recall", report.effort_at_top_recall),
        ("initial_false_alarm", report.initial_false_alarm),
    ] {
        if value.is_none() {
            report
                .undefined
                .insert(name.to_string(), single_class.to_string());
        }
    }

    let export = ranked
        .into_iter()
        .enumerate()
        .map(|(i, l)| RankedLine {
            path: l.path,
            line: l.line,
            score: l.score,
            label: l.label,
            rank: i + 1,
        })
        .collect();
    Ok((report, export))
}

pub fn ranked_to_jsonl(ranked: &[RankedLine]) -> String {
    let mut out = String::new();
    for r in ranked {
        out.push_str(&serde_json::to_string(r).expect("ranked line serializes"));
        out.push('\n');
    }
    out
}

pub fn save_ranked(ranked: &[RankedLine], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, ranked_to_jsonl(ranked).as_bytes())
}

pub fn scores_to_jsonl(scores: &[FileScores]) -> String {
    let mut out = String::new();
    for s in scores {
        out.push_str(&serde_json::to_string(s).expect("scores serialize"));
        out.push('\n');
    }
    out
}

pub fn save_scores(scores: &[FileScores], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, scores_to_jsonl(scores).as_bytes())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoreRecord {
    File(FileScores),
    Line {
        path: String,
        line: usize,
        score: f64,
    },
}

/// Reads line-delimited scores: per-file `{path, scores}` records, per-line
/// `{path, line, score, ..}` records (such as a ranked-lines export), or a mix.
pub fn load_scores(path: &Path) -> Result<Vec<FileScores>> {
    let text = crate::io::read_to_string(path)?;
    let mut files: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let record: ScoreRecord =
            serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        match record {
            ScoreRecord::File(f) => {
                let slot = files.entry(f.path.clone()).or_default();
                if !slot.is_empty() {
                    return Err(malformed(format!("{} is scored twice", f.path)));
                }
                *slot = f.scores.into_iter().map(Some).collect();
            }
            ScoreRecord::Line {
                path: p,
                line,
                score,
            } => {
                if line == 0 {
                    return Err(malformed("line numbers are 1-based".into()));
                }
                let slot = files.entry(p.clone()).or_default();
                if slot.len() < line {
                    slot.resize(line, None);
                }
                if slot[line - 1].replace(score).is_some() {
                    return Err(malformed(format!("{p}:{line} is scored twice")));
                }
            }
        }
    }
    files
        .into_iter()
        .map(|(path, slots)| {
            let scores = slots
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.ok_or_else(|| Error::Coverage(format!("{path}:{} has no score", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(FileScores { path, scores })
        })
        .collect()
}
