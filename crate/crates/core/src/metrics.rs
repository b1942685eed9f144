//! Ranking metrics and small statistics helpers.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

/// Top-`n` `(item, score)` pairs by descending score, lower index first on
/// ties, skipping items in `exclude`.
pub fn top_n(scores: ArrayView1<'_, f64>, n: usize, exclude: &[u32]) -> Vec<(u32, f64)> {
    let mut masked = vec![false; scores.len()];
    for &i in exclude {
        if let Some(m) = masked.get_mut(i as usize) {
            *m = true;
        }
    }
    let mut cands: Vec<(u32, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !masked[*i])
        .map(|(i, &s)| (i as u32, s))
        .collect();
    let cmp = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if n < cands.len() {
        cands.select_nth_unstable_by(n, cmp);
        cands.truncate(n);
    }
    cands.sort_unstable_by(cmp);
    cands
}

fn hit(targets: &[u32], item: u32) -> bool {
    targets.contains(&item)
}

/// `|top[..n] ∩ targets| / min(n, |targets|)`; `None` when there are no targets.
pub fn recall_at_n(ranked: &[u32], targets: &[u32], n: usize) -> Option<f64> {
    if targets.is_empty() || n == 0 {
        return None;
    }
    let hits = ranked.iter().take(n).filter(|&&i| hit(targets, i)).count();
    Some(hits as f64 / n.min(targets.len()) as f64)
}

/// Binary-relevance nDCG with gain `1/log2(pos + 2)` for 0-based positions.
pub fn ndcg_at_n(ranked: &[u32], targets: &[u32], n: usize) -> Option<f64> {
    if targets.is_empty() || n == 0 {
        return None;
    }
    let gain = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, &i)| hit(targets, i))
        .map(|(pos, _)| gain(pos))
        .sum();
    let idcg: f64 = (0..n.min(targets.len())).map(gain).sum();
    Some(dcg / idcg)
}

/// Running mean and standard error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    values: Vec<f64>,
}

impl Summary {
    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Standard error of the mean (sample standard deviation / sqrt(n)).
    pub fn sem(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            sem: self.sem(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sem: f64,
}
