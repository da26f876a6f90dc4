//! RTT normalization, per-node history statistics and feature assembly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, HermitError, Result};
use crate::hypgeom::{log0_raw, Curvature};
use crate::ingest::{SnapshotEdge, SnapshotSequence};

/// `ln(rtt + 1)`.
pub fn log_rtt(rtt_ms: f64) -> Result<f64> {
    if !(rtt_ms >= 0.0) {
        return Err(invalid(format!("rtt must be non-negative, got {rtt_ms}")));
    }
    Ok(rtt_ms.ln_1p())
}

/// Global min-max bounds in the log domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxParams {
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxParams {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if !v.is_finite() {
                return Err(invalid("non-finite value in min-max fit"));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Err(invalid("min-max fit on empty data"));
        }
        if hi <= lo {
            return Err(HermitError::DegenerateRange(lo));
        }
        Ok(Self { lo, hi })
    }

    /// `(v − lo)/(hi − lo)` clamped to `[0, 1]`.
    pub fn apply(&self, v: f64) -> f64 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    pub fn invert(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }

    /// Normalized log value back to milliseconds.
    pub fn to_rtt_ms(&self, u: f64) -> f64 {
        self.invert(u).exp_m1()
    }
}

/// Three-field edge feature `x_uv ∈ [0,1]³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeatureVector {
    pub log_avg_rtt_norm: f64,
    pub log_std_rtt_norm: f64,
    pub weight_norm: f64,
}

impl EdgeFeatureVector {
    pub fn to_array(self) -> [f64; 3] {
        [self.log_avg_rtt_norm, self.log_std_rtt_norm, self.weight_norm]
    }
}

/// One fitted normalizer per edge-feature field. `avg` doubles as the RTT
/// target normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeNormalizer {
    pub avg: MinMaxParams,
    pub std: MinMaxParams,
    pub weight: MinMaxParams,
}

impl EdgeNormalizer {
    /// Fits all three fields over every edge of `train`. The avg-RTT field must
    /// have a non-degenerate range; a constant std or weight field (e.g. all
    /// single-sample edges) maps to 0 instead of failing.
    pub fn fit(train: &SnapshotSequence) -> Result<Self> {
        let edges = || train.snapshots.iter().flat_map(|s| s.edges.iter());
        if edges().next().is_none() {
            return Err(invalid("cannot fit normalizers on an empty training split"));
        }
        let avg = MinMaxParams::fit(edges().map(|e| e.avg_rtt.ln_1p()))?;
        let lenient = |vals: Vec<f64>| match MinMaxParams::fit(vals) {
            Err(HermitError::DegenerateRange(lo)) => Ok(MinMaxParams { lo, hi: lo + 1.0 }),
            other => other,
        };
        let std = lenient(edges().map(|e| e.std_rtt.ln_1p()).collect())?;
        let weight = lenient(edges().map(|e| (e.weight as f64).ln_1p()).collect())?;
        Ok(Self { avg, std, weight })
    }

    pub fn target(&self, edge: &SnapshotEdge) -> f64 {
        self.avg.apply(edge.avg_rtt.ln_1p())
    }
}

pub fn build_edge_feature(edge: &SnapshotEdge, norm: Option<&EdgeNormalizer>) -> Result<EdgeFeatureVector> {
    let norm = norm.ok_or_else(|| HermitError::State("edge normalizer not fitted".into()))?;
    Ok(EdgeFeatureVector {
        log_avg_rtt_norm: norm.avg.apply(log_rtt(edge.avg_rtt)?),
        log_std_rtt_norm: norm.std.apply(log_rtt(edge.std_rtt)?),
        weight_norm: norm.weight.apply((edge.weight as f64).ln_1p()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeHistoryStats {
    pub mean_log_rtt: f64,
    pub std_log_rtt: f64,
}

/// Per-node history, dense over the node vocabulary. Nodes with no training
/// edge carry the global statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeHistory {
    pub stats: Vec<NodeHistoryStats>,
    pub global: NodeHistoryStats,
    pub observed: Vec<bool>,
}

impl NodeHistory {
    pub fn get(&self, node: usize) -> NodeHistoryStats {
        self.stats.get(node).copied().unwrap_or(self.global)
    }
}

fn stats_of(values: &[f64]) -> NodeHistoryStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    NodeHistoryStats { mean_log_rtt: mean, std_log_rtt: var.sqrt() }
}

/// Mean and population std of `ln(avg_rtt + 1)` over every training edge
/// incident to each node, as source or target.
///
/// Takes only the training sub-sequence, so later snapshots cannot leak in.
pub fn compute_node_history(train: &SnapshotSequence) -> Result<NodeHistory> {
    let mut per_node: Vec<Vec<f64>> = vec![Vec::new(); train.num_nodes];
    let mut all = Vec::new();
    for e in train.snapshots.iter().flat_map(|s| &s.edges) {
        let v = log_rtt(e.avg_rtt)?;
        all.push(v);
        per_node[e.source].push(v);
        per_node[e.target].push(v);
    }
    if all.is_empty() {
        return Err(invalid("node history needs at least one training edge"));
    }
    let global = stats_of(&all);
    let observed: Vec<bool> = per_node.iter().map(|v| !v.is_empty()).collect();
    let stats = per_node
        .iter()
        .map(|v| if v.is_empty() { global } else { stats_of(v) })
        .collect();
    Ok(NodeHistory { stats, global, observed })
}

/// `[log0(z_u) ‖ log0(z_v) ‖ f_u ‖ f_v]`, length `2d + 4`.
pub fn build_fusion_feature(
    z_u: &[f64],
    z_v: &[f64],
    f_u: NodeHistoryStats,
    f_v: NodeHistoryStats,
    c: Curvature,
) -> Result<Vec<f64>> {
    if z_u.len() != z_v.len() {
        return Err(invalid(format!("embedding dims differ: {} vs {}", z_u.len(), z_v.len())));
    }
    let mut out = Vec::with_capacity(2 * z_u.len() + 4);
    out.extend(log0_raw(z_u, c.value()));
    out.extend(log0_raw(z_v, c.value()));
    out.extend([f_u.mean_log_rtt, f_u.std_log_rtt, f_v.mean_log_rtt, f_v.std_log_rtt]);
    Ok(out)
}

/// Baseline layout without embeddings: `[f_u ‖ f_v]`.
pub fn build_tabular_feature(f_u: NodeHistoryStats, f_v: NodeHistoryStats) -> Vec<f64> {
    vec![f_u.mean_log_rtt, f_u.std_log_rtt, f_v.mean_log_rtt, f_v.std_log_rtt]
}
