//! End-to-end fitting, evaluation and prediction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::encoder::{
    eval_rng, negative_sample, negative_sample_n, train, ModelConfig, ModelState, PreparedSnapshot, TrainHistory,
};
use crate::encoder::tape::Matrix;
use crate::error::{invalid, HermitError, Result};
use crate::eval::{
    auc, average_precision, error_breakdown, mean, temporal_split, EvalReport, SplitRanges, SplitSpec,
};
use crate::features::{
    build_fusion_feature, build_tabular_feature, compute_node_history, EdgeNormalizer, NodeHistory,
};
use crate::forest::{fit_forest, FeatureMatrix, ForestConfig, ForestModel};
use crate::ingest::{NodeRegistry, SnapshotSequence};

/// Everything needed to reproduce a run; the JSON config file has this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub forest: ForestConfig,
    pub split: SplitSpec,
    /// Also fit the node-history-only forest used as a baseline.
    pub fit_baseline: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            forest: ForestConfig::default(),
            split: SplitSpec::default(),
            fit_baseline: true,
        }
    }
}

impl PipelineConfig {
    /// Points every seeded component at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.forest.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermitModel {
    pub config: PipelineConfig,
    pub split: SplitRanges,
    pub registry: NodeRegistry,
    pub encoder: ModelState,
    pub normalizer: EdgeNormalizer,
    pub history: NodeHistory,
    pub forest: ForestModel,
    pub baseline: Option<ForestModel>,
    /// `hidden_states[k]` is the encoder state before snapshot `k`, so there
    /// is one more entry than snapshots and entry 0 is all zeros.
    pub hidden_states: Vec<Matrix>,
    pub train_history: TrainHistory,
}

/// Hidden state before each snapshot, plus the state after the last one.
pub fn rollout_states(state: &ModelState, snaps: &[PreparedSnapshot]) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(snaps.len() + 1);
    out.push(Matrix::zeros(state.n_nodes(), state.config.embedding_dim));
    for s in snaps {
        let next = state.encode(s, out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

fn fusion_row(model: &HermitModel, h: &Matrix, u: usize, v: usize) -> Result<Vec<f64>> {
    build_fusion_feature(h.row(u), h.row(v), model.history.get(u), model.history.get(v), model.encoder.config.curvature())
}

/// Runs split → normalize → train encoder → rollout → fit forests.
pub fn fit(seq: &SnapshotSequence, config: &PipelineConfig) -> Result<HermitModel> {
    config.model.validate()?;
    config.forest.validate()?;
    let split = temporal_split(seq.len(), &config.split)?;
    let train_seq = seq.slice(split.train.clone());
    let normalizer = EdgeNormalizer::fit(&train_seq)?;
    let history = compute_node_history(&train_seq)?;
    let prepared = PreparedSnapshot::prepare_all(seq, &normalizer)?;

    log::info!(
        "training encoder on {} snapshots ({} val, {} test held out)",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let (mut encoder, train_history) =
        train(seq.num_nodes, &prepared[split.train.clone()], &prepared[split.val.clone()], &config.model)?;
    let hidden_states = rollout_states(&encoder, &prepared);
    encoder.hidden = hidden_states.last().expect("non-empty").clone();
    encoder.last_time = seq.snapshots.last().map(|s| s.time);

    let mut model = HermitModel {
        config: config.clone(),
        split: split.clone(),
        registry: seq.registry.clone(),
        encoder,
        normalizer,
        history,
        forest: ForestModel { trees: Vec::new(), n_features: 0 },
        baseline: None,
        hidden_states,
        train_history,
    };

    // Edges of training snapshot k are paired with the state built from 0..k.
    let d = config.model.embedding_dim;
    let mut fusion_x = FeatureMatrix::new(2 * d + 4);
    let mut tab_x = FeatureMatrix::new(4);
    let mut y = Vec::new();
    for k in split.train.clone().skip(1) {
        let h = &model.hidden_states[k];
        for e in &seq.snapshots[k].edges {
            fusion_x.push(&fusion_row(&model, h, e.source, e.target)?)?;
            tab_x.push(&build_tabular_feature(model.history.get(e.source), model.history.get(e.target)))?;
            y.push(model.normalizer.target(e));
        }
    }
    if y.is_empty() {
        return Err(invalid("no training edges after the first snapshot to fit the forest on"));
    }
    log::info!("fitting forest on {} edges", y.len());
    model.forest = fit_forest(&fusion_x, &y, &config.forest)?;
    if config.fit_baseline {
        model.baseline = Some(fit_forest(&tab_x, &y, &config.forest)?);
    }
    Ok(model)
}

/// Link probability and RTT for one pair against the state before snapshot `time_index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPrediction {
    pub prob: f64,
    pub rtt_ms: f64,
}

impl HermitModel {
    pub fn n_nodes(&self) -> usize {
        self.encoder.n_nodes()
    }

    pub fn state_before(&self, time_index: usize) -> Result<&Matrix> {
        self.hidden_states.get(time_index).ok_or_else(|| {
            invalid(format!("time index {time_index} outside 0..={}", self.hidden_states.len().saturating_sub(1)))
        })
    }

    pub fn predict_rtt_ms(&self, h: &Matrix, u: usize, v: usize) -> Result<f64> {
        self.check_node(u)?;
        self.check_node(v)?;
        let pred = self.forest.predict(&fusion_row(self, h, u, v)?)?;
        Ok(self.normalizer.avg.to_rtt_ms(pred))
    }

    fn baseline_rtt_ms(&self, u: usize, v: usize) -> Result<Option<f64>> {
        let Some(b) = &self.baseline else { return Ok(None) };
        let pred = b.predict(&build_tabular_feature(self.history.get(u), self.history.get(v)))?;
        Ok(Some(self.normalizer.avg.to_rtt_ms(pred)))
    }

    fn check_node(&self, id: usize) -> Result<()> {
        if id >= self.n_nodes() {
            Err(HermitError::UnknownNode(id))
        } else {
            Ok(())
        }
    }

    pub fn predict_pair(&self, u: usize, v: usize, time_index: usize) -> Result<PairPrediction> {
        let h = self.state_before(time_index)?;
        let prob = self.encoder.link_prob(u, v, h)?;
        let rtt_ms = self.predict_rtt_ms(h, u, v)?;
        Ok(PairPrediction { prob, rtt_ms })
    }
}

/// Scores the test range of `seq` with a fitted model.
///
/// Link metrics are averaged over test snapshots. New AUC/AP use edges absent
/// from every earlier snapshot; the RTT Existing/New partition instead asks
/// whether the edge appeared in a training snapshot.
pub fn evaluate(model: &HermitModel, seq: &SnapshotSequence) -> Result<EvalReport> {
    if seq.num_nodes > model.n_nodes() {
        return Err(HermitError::UnknownNode(seq.num_nodes - 1));
    }
    let split = temporal_split(seq.len(), &model.config.split)?;
    if split.test.is_empty() {
        return Err(invalid("empty test range"));
    }
    let prepared = PreparedSnapshot::prepare_all(seq, &model.normalizer)?;
    let states = rollout_states(&model.encoder, &prepared);
    let seed = model.encoder.config.seed;

    let train_edges: HashSet<(usize, usize)> =
        seq.snapshots[split.train.clone()].iter().flat_map(|s| s.pairs()).collect();
    let mut seen: HashSet<(usize, usize)> = seq.snapshots[..split.test.start].iter().flat_map(|s| s.pairs()).collect();

    let (mut aucs, mut aps, mut new_aucs, mut new_aps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut pred, mut base, mut truth, mut existing) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut report = EvalReport { n_test_snapshots: split.test.len(), ..EvalReport::default() };

    for k in split.test.clone() {
        let snap = &seq.snapshots[k];
        let prep = &prepared[k];
        let h = &states[k];
        if !snap.edges.is_empty() {
            let negs = negative_sample(prep, &mut eval_rng(seed, k as u64))?;
            let pos = snap.pairs();
            let scored = score(model, h, &pos, &negs)?;
            aucs.push(auc(&scored)?);
            aps.push(average_precision(&scored)?);

            let new: Vec<(usize, usize)> = pos.iter().filter(|e| !seen.contains(e)).copied().collect();
            report.n_new_edges += new.len();
            if !new.is_empty() {
                let negs = negative_sample_n(prep, new.len(), &mut eval_rng(seed, (1 << 32) | k as u64))?;
                let scored = score(model, h, &new, &negs)?;
                new_aucs.push(auc(&scored)?);
                new_aps.push(average_precision(&scored)?);
            }
        }
        for e in &snap.edges {
            pred.push(model.predict_rtt_ms(h, e.source, e.target)?);
            if let Some(b) = model.baseline_rtt_ms(e.source, e.target)? {
                base.push(b);
            }
            truth.push(e.avg_rtt);
            existing.push(train_edges.contains(&(e.source, e.target)));
        }
        seen.extend(snap.pairs());
    }

    report.auc = mean(&aucs);
    report.ap = mean(&aps);
    report.new_auc = mean(&new_aucs);
    report.new_ap = mean(&new_aps);
    report.n_test_edges = truth.len();
    (report.rmse_ms, report.mae_ms) = error_breakdown(&pred, &truth, &existing);
    if model.baseline.is_some() {
        let (r, m) = error_breakdown(&base, &truth, &existing);
        report.baseline_rmse_ms = Some(r);
        report.baseline_mae_ms = Some(m);
    }
    Ok(report)
}

fn score(
    model: &HermitModel,
    h: &Matrix,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<Vec<crate::encoder::ScoredPair>> {
    let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
    let labels: Vec<bool> = (0..pairs.len()).map(|i| i < pos.len()).collect();
    model.encoder.score_pairs(&pairs, &labels, h)
}
