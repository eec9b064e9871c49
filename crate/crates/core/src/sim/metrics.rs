//! Retrieval and significance metrics.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

/// Average precision of a ranked list: precision at each relevant rank,
/// averaged over the relevant items retrieved. Zero when none is retrieved.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        total / hits as f64
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Area under the ROC curve by the rank-sum statistic, ties counted half.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut pos = 0usize;
    let mut neg = 0usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    for &l in labels {
        if l {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    (rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// All differences equal but nonzero: the statistic is infinite.
    pub degenerate: bool,
}

/// Two-sided paired t-test. Returns `None` for fewer than two pairs or
/// unequal lengths.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Option<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        return Some(if m == 0.0 {
            TTest { t: 0.0, df, p: 1.0, degenerate: false }
        } else {
            TTest {
                t: m.signum() * f64::INFINITY,
                df,
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let t = m / (var / n).sqrt();
    // Two-sided tail of Student's t through the regularized incomplete beta.
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t));
    Some(TTest { t, df, p, degenerate: false })
}
