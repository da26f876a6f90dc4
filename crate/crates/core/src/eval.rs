//! Temporal splits and ranking/regression metrics.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::encoder::ScoredPair;
use crate::error::{invalid, HermitError, Result};

/// Chronological split. Fractions apply with floor rounding and the test
/// split takes the remainder; explicit counts override the fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub train_count: Option<usize>,
    pub val_count: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.85, val_frac: 0.05, test_frac: 0.10, train_count: None, val_count: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Validation may come out empty for short sequences; train and test may not.
pub fn temporal_split(n_snapshots: usize, spec: &SplitSpec) -> Result<SplitRanges> {
    if n_snapshots < 3 {
        return Err(invalid(format!("need at least 3 snapshots to split, got {n_snapshots}")));
    }
    let fracs = [spec.train_frac, spec.val_frac, spec.test_frac];
    if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("split fractions must lie in [0, 1] and sum to 1"));
    }
    let t = n_snapshots as f64;
    let n_train = spec.train_count.unwrap_or((spec.train_frac * t).floor() as usize);
    let n_val = spec.val_count.unwrap_or((spec.val_frac * t).floor() as usize);
    if n_train == 0 || n_train + n_val >= n_snapshots {
        return Err(invalid(format!(
            "split of {n_snapshots} snapshots into {n_train} train / {n_val} val leaves an empty split"
        )));
    }
    Ok(SplitRanges { train: 0..n_train, val: n_train..n_train + n_val, test: n_train + n_val..n_snapshots })
}

/// Edges of `next` absent from every snapshot in `history`.
pub fn new_edges(history: &[HashSet<(usize, usize)>], next: &HashSet<(usize, usize)>) -> HashSet<(usize, usize)> {
    next.iter().filter(|e| !history.iter().any(|h| h.contains(e))).copied().collect()
}

fn class_counts(scored: &[ScoredPair]) -> Result<(usize, usize)> {
    let pos = scored.iter().filter(|s| s.label).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HermitError::UndefinedMetric("metric needs at least one positive and one negative"));
    }
    Ok((pos, neg))
}

/// ROC AUC from the Mann–Whitney statistic with average ranks for ties.
pub fn auc(scored: &[ScoredPair]) -> Result<f64> {
    let (pos, neg) = class_counts(scored)?;
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].prob.total_cmp(&scored[b].prob));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scored[order[j]].prob == scored[order[i]].prob {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let avg = (i + 1 + j) as f64 / 2.0;
        let n_pos = order[i..j].iter().filter(|&&k| scored[k].label).count();
        rank_sum += avg * n_pos as f64;
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Mean precision at each positive's rank under a stable descending sort.
pub fn average_precision(scored: &[ScoredPair]) -> Result<f64> {
    let pos = scored.iter().filter(|s| s.label).count();
    if pos == 0 {
        return Err(HermitError::UndefinedMetric("average precision needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].prob.total_cmp(&scored[a].prob));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if scored[k].label {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// `(RMSE, MAE)` between predictions and ground truth.
pub fn rtt_metrics(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(invalid(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(HermitError::UndefinedMetric("RTT metrics need at least one edge"));
    }
    let n = pred.len() as f64;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    Ok((mse.sqrt(), mae))
}

/// Regression error broken down by whether the edge appeared during training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub global: Option<f64>,
    pub existing: Option<f64>,
    pub new: Option<f64>,
}

/// Test-split metrics. Ranking metrics are means over test snapshots;
/// `None` marks a subset with nothing to score.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub new_auc: Option<f64>,
    pub new_ap: Option<f64>,
    pub rmse_ms: ErrorBreakdown,
    pub mae_ms: ErrorBreakdown,
    /// Same RTT metrics for the forest on node-history features only.
    pub baseline_rmse_ms: Option<ErrorBreakdown>,
    pub baseline_mae_ms: Option<ErrorBreakdown>,
    pub n_test_snapshots: usize,
    pub n_test_edges: usize,
    pub n_new_edges: usize,
}

/// `(RMSE, MAE)` breakdowns from per-edge predictions flagged existing/new.
pub fn error_breakdown(pred: &[f64], truth: &[f64], existing: &[bool]) -> (ErrorBreakdown, ErrorBreakdown) {
    let subset = |keep: &dyn Fn(bool) -> bool| {
        let (p, t): (Vec<f64>, Vec<f64>) = pred
            .iter()
            .zip(truth)
            .zip(existing)
            .filter(|(_, e)| keep(**e))
            .map(|((p, t), _)| (*p, *t))
            .unzip();
        rtt_metrics(&p, &t).ok()
    };
    let g = subset(&|_| true);
    let e = subset(&|x| x);
    let n = subset(&|x| !x);
    (
        ErrorBreakdown { global: g.map(|m| m.0), existing: e.map(|m| m.0), new: n.map(|m| m.0) },
        ErrorBreakdown { global: g.map(|m| m.1), existing: e.map(|m| m.1), new: n.map(|m| m.1) },
    )
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
