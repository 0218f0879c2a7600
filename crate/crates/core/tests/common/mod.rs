//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use hierdefect::metrics::ScoredLine;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Insertion sort on (score descending, path, line).
pub fn rank(lines: &[ScoredLine]) -> Vec<ScoredLine> {
    let before = |a: &ScoredLine, b: &ScoredLine| {
        a.score > b.score
            || (a.score == b.score && (a.path.as_str(), a.line) < (b.path.as_str(), b.line))
    };
    let mut out: Vec<ScoredLine> = Vec::with_capacity(lines.len());
    for l in lines {
        let at = out.iter().position(|o| before(l, o)).unwrap_or(out.len());
        out.insert(at, l.clone());
    }
    out
}

pub fn balanced_accuracy(lines: &[ScoredLine], threshold: f64) -> Option<f64> {
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for l in lines {
        match (l.label == 1, l.score >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return None;
    }
    Some((tp as f64 / (tp + fn_) as f64 + tn as f64 / (tn + fp) as f64) / 2.0)
}

/// Every positive-negative pair: a win counts 2 half-points, a tie 1.
pub fn auroc(lines: &[ScoredLine]) -> Option<f64> {
    let pos: Vec<f64> = lines
        .iter()
        .filter(|l| l.label == 1)
        .map(|l| l.score)
        .collect();
    let neg: Vec<f64> = lines
        .iter()
        .filter(|l| l.label == 0)
        .map(|l| l.score)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut half_points = 0u64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                half_points += 2;
            } else if p == n {
                half_points += 1;
            }
        }
    }
    Some(half_points as f64 / 2.0 / (pos.len() as f64 * neg.len() as f64))
}

/// k = 1/5: inspects max(1, n div 5) lines.
pub fn recall_at_fifth(ranked: &[ScoredLine]) -> Option<f64> {
    let d = ranked.iter().filter(|l| l.label == 1).count();
    if d == 0 {
        return None;
    }
    let m = (ranked.len() / 5).max(1);
    let found = ranked.iter().take(m).filter(|l| l.label == 1).count();
    Some(found as f64 / d as f64)
}

/// k = 1/5: stops once ceil(d / 5) defective lines are seen.
pub fn effort_at_fifth(ranked: &[ScoredLine]) -> Option<f64> {
    let d = ranked.iter().filter(|l| l.label == 1).count();
    if d == 0 {
        return None;
    }
    let target = d.div_ceil(5);
    let mut seen = 0;
    let mut inspected = 0;
    for l in ranked {
        inspected += 1;
        if l.label == 1 {
            seen += 1;
            if seen == target {
                break;
            }
        }
    }
    Some(inspected as f64 / ranked.len() as f64)
}

pub fn initial_false_alarm(ranked: &[ScoredLine]) -> Option<f64> {
    let clean = ranked.iter().take_while(|l| l.label == 0).count();
    (clean < ranked.len()).then(|| clean as f64 / ranked.len() as f64)
}

/// A random instance of 2..=max_lines lines over a few files, with both
/// classes present and frequent score ties.
pub fn random_instance(rng: &mut ChaCha8Rng, max_lines: usize) -> Vec<ScoredLine> {
    let n = rng.gen_range(2..=max_lines);
    let n_files = rng.gen_range(1..=4);
    let tie_levels = rng.gen_range(1..=6);
    let mut lines: Vec<ScoredLine> = (0..n)
        .map(|i| ScoredLine {
            path: format!("f{}.py", i % n_files),
            line: i / n_files + 1,
            score: if rng.gen_bool(0.5) {
                rng.gen_range(0..=tie_levels) as f64 / tie_levels as f64
            } else {
                rng.gen_range(0.0..=1.0)
            },
            label: rng.gen_bool(0.3) as u8,
        })
        .collect();
    let a = rng.gen_range(0..n);
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    lines[a].label = 1;
    lines[b].label = 0;
    lines
}

/// Closed-form window starts: one window when the file fits, otherwise
/// 1 + ceil((n - L) / stride) windows at multiples of the stride.
pub fn window_starts(n: usize, max_lines: usize, overlap: usize) -> Vec<usize> {
    let stride = max_lines - overlap;
    let count = if n <= max_lines {
        1
    } else {
        1 + (n - max_lines).div_ceil(stride)
    };
    (0..count).map(|i| 1 + i * stride).collect()
}

/// Coverage, stride and merge round-trip for one (n, L, N_O) triple.
pub fn check_windowing(n: usize, max_lines: usize, overlap: usize) -> Result<(), String> {
    use hierdefect::preprocess::{merge_window_scores, window_plan, WindowOrigin};

    let plan = window_plan(n, max_lines, overlap).map_err(|e| e.to_string())?;
    let starts: Vec<usize> = plan.ranges.iter().map(|r| r.0).collect();
    if starts != window_starts(n, max_lines, overlap) {
        return Err(format!("starts {starts:?}"));
    }
    let mut cover = vec![0usize; n + 1];
    for &(s, e) in &plan.ranges {
        if e != (s + max_lines - 1).min(n) {
            return Err(format!("window ({s}, {e}) has the wrong end"));
        }
        for c in &mut cover[s..=e] {
            *c += 1;
        }
    }
    if cover[1..].contains(&0) {
        return Err("gap in coverage".into());
    }
    if 2 * overlap < max_lines && cover.iter().any(|&c| c > 2) {
        return Err("line in more than two windows".into());
    }
    for pair in plan.ranges.windows(2) {
        let shared = pair[0].1 + 1 - pair[1].0;
        if shared < overlap || (pair[1].1 < n && shared != overlap) {
            return Err(format!("windows {:?} share {shared} lines", pair));
        }
    }

    // every window reports the true per-line score, plus junk on padded rows;
    // dyadic scores keep the averaged sums exact
    let truth: Vec<f64> = (1..=n).map(|l| (l % 997) as f64 / 1024.0).collect();
    let per_window: Vec<(WindowOrigin, Vec<f64>)> = plan
        .ranges
        .iter()
        .rev()
        .map(|&(s, e)| {
            let mut v: Vec<f64> = (s..=e).map(|l| truth[l - 1]).collect();
            v.resize(max_lines, 7.0);
            (
                WindowOrigin {
                    path: "f".into(),
                    start_line: s,
                },
                v,
            )
        })
        .collect();
    let merged = merge_window_scores(&per_window, &plan, n).map_err(|e| e.to_string())?;
    if merged != truth {
        return Err("merge round-trip changed scores".into());
    }
    Ok(())
}
