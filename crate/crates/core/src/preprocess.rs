//! Fixed-shape (lines x tokens) windows over source files, and the inverse
//! mapping of per-window line scores back onto the original lines.

use std::collections::HashMap;

use crate::corpus::SourceFile;
use crate::error::{Error, Result};
use crate::tokenizer::{Vocabulary, PAD_ID};

/// Inclusive, 1-based line ranges, one per window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub ranges: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Windows of at most `max_lines` lines; consecutive windows share `overlap` lines.
pub fn window_plan(n_lines: usize, max_lines: usize, overlap: usize) -> Result<WindowPlan> {
    if max_lines == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    if overlap >= max_lines {
        return Err(Error::invalid(format!(
            "overlap {overlap} must be smaller than window length {max_lines}"
        )));
    }
    if n_lines == 0 {
        return Err(Error::invalid("cannot window an empty file"));
    }
    let stride = max_lines - overlap;
    let mut ranges = Vec::new();
    let mut start = 1;
    loop {
        let end = (start + max_lines - 1).min(n_lines);
        ranges.push((start, end));
        if start + max_lines > n_lines {
            break;
        }
        start += stride;
    }
    Ok(WindowPlan { ranges })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowOrigin {
    pub path: String,
    /// 1-based index of the window's first row in the source file.
    pub start_line: usize,
}

/// One (rows x cols) token matrix, stored row-major. Real lines come first;
/// padding rows are all PAD with `line_mask` 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FileWindow {
    pub rows: usize,
    pub cols: usize,
    pub token_ids: Vec<u32>,
    pub token_mask: Vec<u8>,
    pub line_mask: Vec<u8>,
    pub line_labels: Vec<u8>,
    pub origin: WindowOrigin,
}

impl FileWindow {
    pub fn n_real_lines(&self) -> usize {
        self.line_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn row_ids(&self, row: usize) -> &[u32] {
        &self.token_ids[row * self.cols..(row + 1) * self.cols]
    }

    /// 1 if any real line is defective.
    pub fn file_label(&self) -> u8 {
        self.line_labels
            .iter()
            .zip(&self.line_mask)
            .any(|(&l, &m)| m == 1 && l == 1) as u8
    }

    pub fn check_invariants(&self) -> bool {
        let cells_ok = self
            .token_ids
            .iter()
            .zip(&self.token_mask)
            .all(|(&id, &m)| m == 1 || id == PAD_ID);
        let n_real = self.n_real_lines();
        let prefix_ok = self.line_mask[..n_real].iter().all(|&m| m == 1);
        let pad_rows_ok = (n_real..self.rows).all(|r| {
            self.line_labels[r] == 0
                && self.token_mask[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .all(|&m| m == 0)
        });
        cells_ok && prefix_ok && pad_rows_ok
    }
}

/// Encodes `file` into one window per plan entry. Lines longer than `cols`
/// tokens keep their first `cols` tokens.
pub fn encode_file(
    vocab: &Vocabulary,
    file: &SourceFile,
    rows: usize,
    cols: usize,
    overlap: usize,
) -> Result<Vec<FileWindow>> {
    file.validate()?;
    if cols == 0 {
        return Err(Error::invalid("tokens per line must be positive"));
    }
    let plan = window_plan(file.n_lines(), rows, overlap)?;
    let encoded: Vec<Vec<u32>> = file.lines.iter().map(|l| vocab.encode_line(l)).collect();
    Ok(plan
        .ranges
        .iter()
        .map(|&(start, end)| {
            let mut w = FileWindow {
                rows,
                cols,
                token_ids: vec![PAD_ID; rows * cols],
                token_mask: vec![0; rows * cols],
                line_mask: vec![0; rows],
                line_labels: vec![0; rows],
                origin: WindowOrigin {
                    path: file.path.clone(),
                    start_line: start,
                },
            };
            for (r, line_no) in (start..=end).enumerate() {
                let ids = &encoded[line_no - 1];
                let n = ids.len().min(cols);
                w.token_ids[r * cols..r * cols + n].copy_from_slice(&ids[..n]);
                w.token_mask[r * cols..r * cols + n].fill(1);
                w.line_mask[r] = 1;
                w.line_labels[r] = file.labels[line_no - 1];
            }
            w
        })
        .collect())
}

/// Averages overlapping window scores per source line. `per_window` must hold
/// exactly one entry per planned window; rows past a window's real lines are ignored.
pub fn merge_window_scores(
    per_window: &[(WindowOrigin, Vec<f64>)],
    plan: &WindowPlan,
    n_lines: usize,
) -> Result<Vec<f64>> {
    let mut by_start: HashMap<usize, &[f64]> = HashMap::new();
    for (origin, scores) in per_window {
        if by_start.insert(origin.start_line, scores).is_some() {
            return Err(Error::Coverage(format!(
                "two score vectors for window starting at line {}",
                origin.start_line
            )));
        }
    }
    if by_start.len() != plan.len() {
        return Err(Error::Coverage(format!(
            "{} score vectors for {} planned windows",
            by_start.len(),
            plan.len()
        )));
    }
    let mut sum = vec![0.0; n_lines];
    let mut count = vec![0usize; n_lines];
    for &(start, end) in &plan.ranges {
        let scores = by_start.get(&start).ok_or_else(|| {
            Error::Coverage(format!("no scores for window starting at line {start}"))
        })?;
        if end > n_lines || scores.len() < end - start + 1 {
            return Err(Error::Coverage(format!(
                "window ({start}, {end}) does not fit {n_lines} lines / {} scores",
                scores.len()
            )));
        }
        for line in start..=end {
            sum[line - 1] += scores[line - start];
            count[line - 1] += 1;
        }
    }
    if let Some(gap) = count.iter().position(|&c| c == 0) {
        return Err(Error::Coverage(format!(
            "line {} is not covered by any window",
            gap + 1
        )));
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect())
}
