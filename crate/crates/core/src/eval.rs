//! Evaluation metrics.

use crate::error::{Error, Result};

/// `|ideal - est| / ideal`.
pub fn relative_error(est: f64, ideal: f64) -> Result<f64> {
    if !(ideal > 0.0) {
        return Err(Error::invalid(format!(
            "relative error needs a positive ideal loss, got {ideal}"
        )));
    }
    Ok((ideal - est).abs() / ideal)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    paired(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    paired(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

fn paired(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("metric over no pairs".into()));
    }
    Ok(())
}

/// Probability a random positive outranks a random negative, ties counted as one half.
///
/// Labels are positive when `> 0.5`. Computed from average ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    paired(scores, labels)?;
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|l| **l > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both positive and negative labels"));
    }
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their average
        let avg = (start + 1 + end) as f64 / 2.0;
        for &j in &idx[start..end] {
            if labels[j] > 0.5 {
                rank_sum += avg;
            }
        }
        start = end;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// DCG@k of relevances listed in ranked order.
fn dcg(rels: impl Iterator<Item = f64>, k: usize) -> f64 {
    rels.take(k).enumerate().map(|(r, g)| g / ((r + 2) as f64).log2()).sum()
}

/// NDCG@k for one user. `None` when the ideal DCG is zero.
pub fn ndcg_user(scores: &[f64], rels: &[f64], k: usize) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort: ties keep input order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ideal = rels.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg <= 0.0 {
        return None;
    }
    Some(dcg(order.iter().map(|&j| rels[j]), k) / idcg)
}

/// Mean NDCG@k over users with a positive ideal DCG.
pub fn ndcg_at_k(scores: &[Vec<f64>], rels: &[Vec<f64>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("NDCG cut-off must be at least 1"));
    }
    if scores.len() != rels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: rels.len(),
        });
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (s, r) in scores.iter().zip(rels) {
        if s.len() != r.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                got: r.len(),
            });
        }
        if let Some(v) = ndcg_user(s, r, k) {
            total += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no user has a relevant item".into()));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub k: Option<usize>,
    pub n: usize,
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let k = self.k.map(|k| k.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.name, k, self.value, self.n)
    }
}

pub const METRIC_HEADER: &str = "metric,k,value,n";
