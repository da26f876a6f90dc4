//! The hyperbolic temporal encoder.
//!
//! One step over snapshot `G_t`:
//!
//! 1. node embeddings are mapped to the origin tangent space;
//! 2. each node averages its own tangent vector (coefficient 1) with its
//!    in-neighbours' vectors weighted by the edge encoder
//!    `sigmoid(w·x_uv + b)`, applies the orthogonal layer matrix and maps
//!    back onto the ball (repeated per configured layer);
//! 3. a GRU cell in the tangent space folds the result into the recurrent
//!    hidden state, which is the embedding `z_u(t)`.
//!
//! Links at `t+1` are scored with the Fermi–Dirac decoder on the squared
//! Poincaré distance of hidden states; an auxiliary MLP predicts the
//! normalized log-RTT of `E_{t+1}` from the same states.

pub mod ballops;
pub mod params;
pub mod tape;

use std::collections::HashSet;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HermitError, Result};
use crate::eval::auc;
use crate::features::{build_edge_feature, EdgeFeatureVector, EdgeNormalizer};
use crate::hypgeom::{
    adam_step, dist_raw, fermi_dirac, radam_step_rows, AdamMoments, Curvature, FermiDiracParams,
};
use crate::ingest::{Snapshot, SnapshotSequence};

pub use params::{orthogonality_error, orthonormalize, ModelParams, ParamKind};
use tape::{sigmoid, Gradients, Matrix, Tape, Unary, Var};

/// Quantity watched for early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValAuc,
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub curvature: f64,
    pub learning_rate: f64,
    pub rtt_loss_weight: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub dropout: f64,
    pub mlp_hidden: usize,
    pub fermi_dirac: FermiDiracParams,
    pub seed: u64,
    pub edge_features_enabled: bool,
    pub gnn_layers: usize,
    pub monitor: Monitor,
    pub embedding_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            curvature: 1.0,
            learning_rate: 1e-4,
            rtt_loss_weight: 10.0,
            max_epochs: 50,
            early_stop_patience: 20,
            dropout: 0.2,
            mlp_hidden: 32,
            fermi_dirac: FermiDiracParams::default(),
            seed: 1024,
            edge_features_enabled: true,
            gnn_layers: 1,
            monitor: Monitor::ValAuc,
            embedding_init_std: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(invalid("embedding_dim must be at least 2"));
        }
        Curvature::new(self.curvature)?;
        FermiDiracParams::new(self.fermi_dirac.r, self.fermi_dirac.t)?;
        if !(self.rtt_loss_weight >= 0.0) {
            return Err(invalid("rtt_loss_weight must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) || self.mlp_hidden == 0 || self.gnn_layers == 0 {
            return Err(invalid("learning_rate, mlp_hidden and gnn_layers must be positive"));
        }
        Ok(())
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::new(self.curvature).expect("validated curvature")
    }
}

/// A snapshot with its edge features and RTT targets precomputed.
#[derive(Debug, Clone)]
pub struct PreparedSnapshot {
    pub time: usize,
    pub sources: Rc<[usize]>,
    pub targets: Rc<[usize]>,
    /// `E×3` normalized edge features.
    pub features: Matrix,
    /// Normalized log-RTT per edge.
    pub rtt_targets: Vec<f64>,
    pub nodes: Vec<usize>,
    pub edge_set: HashSet<(usize, usize)>,
}

impl PreparedSnapshot {
    pub fn new(snapshot: &Snapshot, norm: &EdgeNormalizer) -> Result<Self> {
        let feats: Vec<EdgeFeatureVector> = snapshot
            .edges
            .iter()
            .map(|e| build_edge_feature(e, Some(norm)))
            .collect::<Result<_>>()?;
        let mut features = Matrix::zeros(feats.len(), 3);
        for (i, f) in feats.iter().enumerate() {
            features.row_mut(i).copy_from_slice(&f.to_array());
        }
        let rtt_targets = snapshot.edges.iter().map(|e| norm.target(e)).collect();
        Ok(Self::from_parts(snapshot, features, rtt_targets))
    }

    pub fn from_parts(snapshot: &Snapshot, features: Matrix, rtt_targets: Vec<f64>) -> Self {
        let sources: Vec<usize> = snapshot.edges.iter().map(|e| e.source).collect();
        let targets: Vec<usize> = snapshot.edges.iter().map(|e| e.target).collect();
        Self {
            time: snapshot.time,
            sources: sources.into(),
            targets: targets.into(),
            features,
            rtt_targets,
            nodes: snapshot.nodes(),
            edge_set: snapshot.edge_set(),
        }
    }

    pub fn prepare_all(seq: &SnapshotSequence, norm: &EdgeNormalizer) -> Result<Vec<Self>> {
        seq.snapshots.iter().map(|s| Self::new(s, norm)).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.sources.iter().copied().zip(self.targets.iter().copied()).collect()
    }
}

/// Encoder parameters plus the recurrent hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub hidden: Matrix,
    /// Time index of the last snapshot folded into `hidden`.
    pub last_time: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub u: usize,
    pub v: usize,
    pub label: bool,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub link: f64,
    pub rtt: f64,
}

/// Tape handles for each parameter tensor, in canonical order.
struct Leaves {
    vars: Vec<Var>,
    n_layers: usize,
}

impl Leaves {
    fn register(t: &mut Tape, p: &ModelParams) -> Self {
        let vars = p.tensors().into_iter().map(|(_, _, m)| t.leaf(m.clone())).collect();
        Self { vars, n_layers: p.layers.len() }
    }
    fn embeddings(&self) -> Var {
        self.vars[0]
    }
    fn layer(&self, i: usize) -> Var {
        self.vars[1 + i]
    }
    fn edge_w(&self) -> Var {
        self.vars[1 + self.n_layers]
    }
    fn edge_b(&self) -> Var {
        self.vars[2 + self.n_layers]
    }
    /// (w, u, b) for gate `g`.
    fn gate(&self, g: usize) -> (Var, Var, Var) {
        let base = 3 + self.n_layers + 3 * g;
        (self.vars[base], self.vars[base + 1], self.vars[base + 2])
    }
    fn mlp(&self) -> (Var, Var, Var, Var) {
        let base = 12 + self.n_layers;
        (self.vars[base], self.vars[base + 1], self.vars[base + 2], self.vars[base + 3])
    }
}

struct Graph<'a> {
    tape: Tape,
    leaves: Leaves,
    cfg: &'a ModelConfig,
    c: Curvature,
}

impl<'a> Graph<'a> {
    fn new(state: &'a ModelState) -> Self {
        let mut tape = Tape::new();
        let leaves = Leaves::register(&mut tape, &state.params);
        Self { tape, leaves, cfg: &state.config, c: state.config.curvature() }
    }

    /// `E×1` message weights in (0,1), or all ones in the ablation.
    fn edge_weights(&mut self, snap: &PreparedSnapshot) -> Var {
        if !self.cfg.edge_features_enabled {
            return self.tape.constant(Matrix::filled(snap.n_edges(), 1, 1.0));
        }
        let x = self.tape.constant(snap.features.clone());
        let lin = self.tape.matmul(x, self.leaves.edge_w());
        let lin = self.tape.add(lin, self.leaves.edge_b());
        self.tape.sigmoid(lin)
    }

    fn message_pass(&mut self, snap: &PreparedSnapshot) -> Var {
        let n = self.leaves.vars.first().map(|v| self.tape.value(*v).rows).unwrap_or(0);
        let mut x = self.leaves.embeddings();
        let weights = self.edge_weights(snap);
        let denom = self.tape.scatter_add_rows(weights, snap.targets.clone(), n);
        let denom = self.tape.offset(denom, 1.0);
        for layer in 0..self.cfg.gnn_layers {
            let tan = ballops::log0(&mut self.tape, x, self.c);
            let msgs = self.tape.gather_rows(tan, snap.sources.clone());
            let msgs = self.tape.mul(msgs, weights);
            let agg = self.tape.scatter_add_rows(msgs, snap.targets.clone(), n);
            let agg = self.tape.add(agg, tan);
            let mean = self.tape.div(agg, denom);
            let h = self.tape.matmul(mean, self.leaves.layer(layer));
            let e = ballops::exp0(&mut self.tape, h, self.c);
            x = ballops::project(&mut self.tape, e, self.c);
        }
        x
    }

    fn gru(&mut self, aggregated: Var, hidden: &Matrix) -> Var {
        let t = &mut self.tape;
        let x = ballops::log0(t, aggregated, self.c);
        let h0 = t.constant(hidden.clone());
        let hp = ballops::log0(t, h0, self.c);
        let gate = |t: &mut Tape, g: usize, h_in: Var| {
            let (w, u, b) = self.leaves.gate(g);
            let xw = t.matmul(x, w);
            let hu = t.matmul(h_in, u);
            let s = t.add(xw, hu);
            t.add(s, b)
        };
        let r = gate(t, params::GATE_RESET, hp);
        let r = t.sigmoid(r);
        let z = gate(t, params::GATE_UPDATE, hp);
        let z = t.sigmoid(z);
        let rh = t.mul(r, hp);
        let cand = gate(t, params::GATE_CANDIDATE, rh);
        let cand = t.tanh(cand);
        // (1 − z)·h + z·n  =  h + z·(n − h)
        let delta = t.sub(cand, hp);
        let zd = t.mul(z, delta);
        let next = t.add(hp, zd);
        let e = ballops::exp0(t, next, self.c);
        ballops::project(t, e, self.c)
    }

    fn encode(&mut self, snap: &PreparedSnapshot, hidden: &Matrix) -> Var {
        let agg = self.message_pass(snap);
        self.gru(agg, hidden)
    }

    fn link_logits(&mut self, h: Var, us: Rc<[usize]>, vs: Rc<[usize]>) -> Var {
        let zu = self.tape.gather_rows(h, us);
        let zv = self.tape.gather_rows(h, vs);
        let sq = ballops::sq_dist(&mut self.tape, zu, zv, self.c);
        ballops::fermi_dirac_logit(&mut self.tape, sq, self.cfg.fermi_dirac.r, self.cfg.fermi_dirac.t)
    }

    fn rtt_head(&mut self, h: Var, us: Rc<[usize]>, vs: Rc<[usize]>, mask: Option<Matrix>) -> Var {
        let t = &mut self.tape;
        let zu = t.gather_rows(h, us);
        let zv = t.gather_rows(h, vs);
        let tu = ballops::log0(t, zu, self.c);
        let tv = ballops::log0(t, zv, self.c);
        let inp = t.concat_cols(tu, tv);
        let (w1, b1, w2, b2) = self.leaves.mlp();
        let a = t.matmul(inp, w1);
        let a = t.add(a, b1);
        let mut a = t.relu(a);
        if let Some(mask) = mask {
            let m = t.constant(mask);
            a = t.mul(a, m);
        }
        let o = t.matmul(a, w2);
        let o = t.add(o, b2);
        t.sigmoid(o)
    }
}

impl ModelState {
    pub fn new(config: ModelConfig, n_nodes: usize) -> Result<Self> {
        config.validate()?;
        let c = config.curvature();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(
            &mut rng,
            n_nodes,
            config.embedding_dim,
            config.gnn_layers,
            config.mlp_hidden,
            config.embedding_init_std,
            c,
        );
        let hidden = Matrix::zeros(n_nodes, config.embedding_dim);
        Ok(Self { config, params, hidden, last_time: None })
    }

    pub fn n_nodes(&self) -> usize {
        self.params.n_nodes()
    }

    pub fn reset_hidden(&mut self) {
        self.hidden = Matrix::zeros(self.n_nodes(), self.config.embedding_dim);
        self.last_time = None;
    }

    /// Message weight `sigmoid(w·x + b)`, or 1 with edge features disabled.
    pub fn edge_weight(&self, feature: &EdgeFeatureVector) -> f64 {
        if !self.config.edge_features_enabled {
            return 1.0;
        }
        let x = feature.to_array();
        let w = &self.params.edge_w.data;
        sigmoid(x[0] * w[0] + x[1] * w[1] + x[2] * w[2] + self.params.edge_b.data[0])
    }

    /// Edge-aware message passing from the node embeddings, `N×d` on the ball.
    pub fn message_pass(&self, snap: &PreparedSnapshot) -> Matrix {
        let mut g = Graph::new(self);
        let v = g.message_pass(snap);
        g.tape.value(v).clone()
    }

    /// GRU update of `hidden` with already-aggregated ball points.
    pub fn temporal_update(&self, aggregated: &Matrix, hidden: &Matrix) -> Matrix {
        let mut g = Graph::new(self);
        let a = g.tape.constant(aggregated.clone());
        let v = g.gru(a, hidden);
        g.tape.value(v).clone()
    }

    /// Next hidden state after folding in `snap`; parameters untouched.
    pub fn encode(&self, snap: &PreparedSnapshot, hidden: &Matrix) -> Matrix {
        let mut g = Graph::new(self);
        let v = g.encode(snap, hidden);
        g.tape.value(v).clone()
    }

    /// `fermi_dirac(d(z_u, z_v)²)` on the rows of `hidden`.
    pub fn link_prob(&self, u: usize, v: usize, hidden: &Matrix) -> Result<f64> {
        for id in [u, v] {
            if id >= hidden.rows {
                return Err(HermitError::UnknownNode(id));
            }
        }
        // Fixed argument order makes the score exactly symmetric in (u, v).
        let (a, b) = (u.min(v), u.max(v));
        let d = dist_raw(hidden.row(a), hidden.row(b), self.config.curvature);
        Ok(fermi_dirac(d * d, self.config.fermi_dirac))
    }

    /// Evaluation-mode auxiliary MLP prediction in (0,1).
    pub fn rtt_head(&self, z_u: &[f64], z_v: &[f64]) -> Result<f64> {
        let d = self.config.embedding_dim;
        if z_u.len() != d || z_v.len() != d {
            return Err(invalid("embedding length does not match the model dimension"));
        }
        let mut g = Graph::new(self);
        let mut h = Matrix::zeros(2, d);
        h.row_mut(0).copy_from_slice(z_u);
        h.row_mut(1).copy_from_slice(z_v);
        let hv = g.tape.constant(h);
        let o = g.rtt_head(hv, Rc::from(vec![0]), Rc::from(vec![1]), None);
        Ok(g.tape.value(o).data[0])
    }

    pub fn score_pairs(&self, pairs: &[(usize, usize)], labels: &[bool], hidden: &Matrix) -> Result<Vec<ScoredPair>> {
        pairs
            .iter()
            .zip(labels)
            .map(|(&(u, v), &label)| Ok(ScoredPair { u, v, label, prob: self.link_prob(u, v, hidden)? }))
            .collect()
    }
}

/// Exactly `|E_t|` distinct ordered non-edges of `V_t × V_t`, uniformly at random.
pub fn negative_sample<R: Rng>(snap: &PreparedSnapshot, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    negative_sample_n(snap, snap.n_edges(), rng)
}

pub fn negative_sample_n<R: Rng>(snap: &PreparedSnapshot, k: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let nv = snap.nodes.len();
    let possible = nv * nv.saturating_sub(1);
    let available = possible.saturating_sub(snap.edge_set.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if available == 0 || k > available {
        return Err(HermitError::CompleteGraph);
    }
    let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    if k * 4 > available {
        // Dense regime: enumerate the complement and draw without replacement.
        let mut pool: Vec<(usize, usize)> = Vec::with_capacity(available);
        for &u in &snap.nodes {
            for &v in &snap.nodes {
                if u != v && !snap.edge_set.contains(&(u, v)) {
                    pool.push((u, v));
                }
            }
        }
        for i in 0..k {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
            out.push(pool[i]);
        }
        return Ok(out);
    }
    while out.len() < k {
        let u = snap.nodes[rng.random_range(0..nv)];
        let v = snap.nodes[rng.random_range(0..nv)];
        if u == v || snap.edge_set.contains(&(u, v)) || !chosen.insert((u, v)) {
            continue;
        }
        out.push((u, v));
    }
    Ok(out)
}

/// Loss, gradients (canonical parameter order) and the next hidden state for
/// one training step: encode `current` on top of `hidden`, then score `next`.
pub struct StepOutput {
    pub loss: LossBreakdown,
    pub grads: Vec<Matrix>,
    pub next_hidden: Matrix,
}

fn dropout_mask<R: Rng>(rng: &mut R, rows: usize, cols: usize, p: f64) -> Matrix {
    let keep = 1.0 - p;
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// `L = L_link + λ·L_RTT` for the step `current → next`.
///
/// Negatives (1:1 with `E_{t+1}`) and, when `training`, the dropout mask are
/// drawn from `rng` in that order.
pub fn loss_total<R: Rng>(
    state: &ModelState,
    current: &PreparedSnapshot,
    next: &PreparedSnapshot,
    hidden: &Matrix,
    rng: &mut R,
    training: bool,
) -> Result<StepOutput> {
    let negatives = negative_sample(next, rng)?;
    let mut g = Graph::new(state);
    let h = g.encode(current, hidden);

    let positives = next.pairs();
    let n_pos = positives.len();
    let mut us: Vec<usize> = positives.iter().map(|p| p.0).collect();
    let mut vs: Vec<usize> = positives.iter().map(|p| p.1).collect();
    us.extend(negatives.iter().map(|p| p.0));
    vs.extend(negatives.iter().map(|p| p.1));

    let mut terms = Vec::new();
    let mut link = 0.0;
    if !us.is_empty() {
        let logits = g.link_logits(h, us.into(), vs.into());
        let total = n_pos + negatives.len();
        let labels: Vec<f64> = (0..total).map(|i| if i < n_pos { 1.0 } else { 0.0 }).collect();
        let t = &mut g.tape;
        let lab = t.constant(Matrix::from_vec(total, 1, labels.clone()));
        let inv = t.constant(Matrix::from_vec(total, 1, labels.iter().map(|l| 1.0 - l).collect()));
        // BCE with logit z: ℓ·softplus(−z) + (1−ℓ)·softplus(z)
        let nz = t.map(logits, Unary::Neg);
        let sp_neg = t.map(nz, Unary::Softplus);
        let sp_pos = t.map(logits, Unary::Softplus);
        let a = t.mul(lab, sp_neg);
        let b = t.mul(inv, sp_pos);
        let bce = t.add(a, b);
        let m = t.mean(bce);
        link = t.value(m).data[0];
        terms.push(m);
    }

    let mut rtt = 0.0;
    if n_pos > 0 {
        let mask = if training && state.config.dropout > 0.0 {
            Some(dropout_mask(rng, n_pos, state.config.mlp_hidden, state.config.dropout))
        } else {
            None
        };
        let pred = g.rtt_head(h, next.sources.clone(), next.targets.clone(), mask);
        let t = &mut g.tape;
        let y = t.constant(Matrix::from_vec(n_pos, 1, next.rtt_targets.clone()));
        let diff = t.sub(pred, y);
        let sq = t.map(diff, Unary::Square);
        let m = t.mean(sq);
        rtt = t.value(m).data[0];
        let weighted = t.scale(m, state.config.rtt_loss_weight);
        terms.push(weighted);
    } else {
        log::warn!("snapshot {} has no edges; RTT loss term omitted", next.time);
    }

    let next_hidden = g.tape.value(h).clone();
    let loss = LossBreakdown { total: link + state.config.rtt_loss_weight * rtt, link, rtt };
    let grads = match terms.as_slice() {
        [] => zero_grads(&state.params),
        [only] => collect_grads(&g.tape.backward(*only), &g.leaves, &state.params),
        [a, b] => {
            let sum = g.tape.add(*a, *b);
            collect_grads(&g.tape.backward(sum), &g.leaves, &state.params)
        }
        _ => unreachable!(),
    };
    Ok(StepOutput { loss, grads, next_hidden })
}

fn zero_grads(p: &ModelParams) -> Vec<Matrix> {
    p.tensors().into_iter().map(|(_, _, m)| Matrix::zeros(m.rows, m.cols)).collect()
}

fn collect_grads(g: &Gradients, leaves: &Leaves, p: &ModelParams) -> Vec<Matrix> {
    p.tensors()
        .into_iter()
        .zip(&leaves.vars)
        .map(|((_, _, m), v)| g.get_or_zeros(*v, m))
        .collect()
}

/// Adam state for every parameter tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    moments: Vec<AdamMoments>,
}

impl Optimizer {
    pub fn new(p: &ModelParams) -> Self {
        Self { moments: p.tensors().iter().map(|(_, _, m)| AdamMoments::new(m.data.len())).collect() }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Matrix], lr: f64, c: Curvature) {
        let kinds = params.kinds();
        for (((tensor, grad), kind), st) in
            params.tensors_mut().into_iter().zip(grads).zip(kinds).zip(&mut self.moments)
        {
            match kind {
                ParamKind::Ball => {
                    let dim = tensor.cols;
                    radam_step_rows(&mut tensor.data, dim, &grad.data, st, lr, c);
                    debug_assert!(tensor
                        .data
                        .chunks(dim)
                        .all(|r| crate::hypgeom::norm(r) < 1.0 / c.sqrt()));
                }
                ParamKind::Orthogonal => {
                    adam_step(&mut tensor.data, &grad.data, st, lr);
                    orthonormalize(tensor);
                }
                ParamKind::Euclidean => adam_step(&mut tensor.data, &grad.data, st, lr),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there is no validation snapshot to score.
    pub val_auc: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_auc\n");
        for e in &self.epochs {
            let auc = e.val_auc.map_or(String::new(), |a| format!("{a:.9}"));
            s.push_str(&format!("{},{:.9},{auc}\n", e.epoch, e.train_loss));
        }
        s
    }
}

/// Seed for the fixed evaluation negative stream, distinct from training streams.
pub const EVAL_SEED_OFFSET: u64 = 0x5eed_e7a1;

pub fn eval_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_OFFSET);
    rng.set_stream(stream);
    rng
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64))
}

/// Result of validating a frozen model: mean per-snapshot AUC and link loss.
fn validate(state: &ModelState, hidden: &Matrix, val: &[PreparedSnapshot]) -> Result<(Option<f64>, Option<f64>)> {
    let mut h = hidden.clone();
    let mut aucs = Vec::new();
    let mut losses = Vec::new();
    for (k, snap) in val.iter().enumerate() {
        let mut rng = eval_rng(state.config.seed, k as u64);
        let negs = negative_sample(snap, &mut rng)?;
        let mut pairs = snap.pairs();
        let mut labels = vec![true; pairs.len()];
        pairs.extend(&negs);
        labels.extend(std::iter::repeat_n(false, negs.len()));
        let scored = state.score_pairs(&pairs, &labels, &h)?;
        if let Ok(a) = auc(&scored) {
            aucs.push(a);
        }
        if !scored.is_empty() {
            let bce: f64 = scored
                .iter()
                .map(|s| {
                    let p = s.prob.clamp(1e-15, 1.0 - 1e-15);
                    if s.label {
                        -p.ln()
                    } else {
                        -(1.0 - p).ln()
                    }
                })
                .sum::<f64>()
                / scored.len() as f64;
            losses.push(bce);
        }
        h = state.encode(snap, &h);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok((mean(&aucs), mean(&losses)))
}

/// Folds `snaps` into `hidden` in order, returning the state after each one.
pub fn rollout(state: &ModelState, snaps: &[PreparedSnapshot], hidden: &Matrix) -> Vec<Matrix> {
    let mut h = hidden.clone();
    snaps
        .iter()
        .map(|s| {
            h = state.encode(s, &h);
            h.clone()
        })
        .collect()
}

/// Runs one pass over the training snapshots, returning the mean step loss
/// and the hidden state after the last training snapshot.
pub fn train_epoch(
    state: &mut ModelState,
    opt: &mut Optimizer,
    train: &[PreparedSnapshot],
    epoch: usize,
) -> Result<(f64, Matrix)> {
    let mut rng = epoch_rng(state.config.seed, epoch);
    let c = state.config.curvature();
    let lr = state.config.learning_rate;
    let mut hidden = Matrix::zeros(state.n_nodes(), state.config.embedding_dim);
    let mut losses = Vec::new();
    for w in train.windows(2) {
        let out = loss_total(state, &w[0], &w[1], &hidden, &mut rng, true)?;
        if !out.loss.total.is_finite() {
            return Err(HermitError::Divergence(format!(
                "non-finite loss at epoch {epoch}, snapshot {} (link {}, rtt {})",
                w[0].time, out.loss.link, out.loss.rtt
            )));
        }
        opt.step(&mut state.params, &out.grads, lr, c);
        losses.push(out.loss.total);
        hidden = out.next_hidden;
    }
    if let Some(last) = train.last() {
        hidden = state.encode(last, &hidden);
    }
    let mean = if losses.is_empty() { 0.0 } else { losses.iter().sum::<f64>() / losses.len() as f64 };
    Ok((mean, hidden))
}

/// Trains from a freshly initialized state.
pub fn train(
    n_nodes: usize,
    train: &[PreparedSnapshot],
    val: &[PreparedSnapshot],
    config: &ModelConfig,
) -> Result<(ModelState, TrainHistory)> {
    let state = ModelState::new(config.clone(), n_nodes)?;
    train_from(state, train, val)
}

/// Epoch loop with validation-based model selection and early stopping.
/// The returned state carries the best epoch's parameters and the hidden
/// state after the training snapshots.
pub fn train_from(
    mut state: ModelState,
    train: &[PreparedSnapshot],
    val: &[PreparedSnapshot],
) -> Result<(ModelState, TrainHistory)> {
    if train.len() < 2 {
        return Err(invalid("training needs at least two snapshots"));
    }
    let mut opt = Optimizer::new(&state.params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams, Matrix)> = None;
    let mut stale = 0usize;
    for epoch in 1..=state.config.max_epochs {
        let (train_loss, hidden) = train_epoch(&mut state, &mut opt, train, epoch)?;
        let (val_auc, val_loss) = if val.is_empty() { (None, None) } else { validate(&state, &hidden, val)? };
        history.epochs.push(EpochRecord { epoch, train_loss, val_auc, val_loss });
        // Higher is better for the selection score.
        let monitored = match state.config.monitor {
            Monitor::ValAuc => val_auc,
            Monitor::ValLoss => val_loss.map(|l| -l),
        };
        let score = monitored.unwrap_or(-train_loss);
        let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
        if improved {
            best = Some((score, state.params.clone(), hidden));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= state.config.early_stop_patience {
                break;
            }
        }
    }
    if let Some((_, params, hidden)) = best {
        state.params = params;
        state.hidden = hidden;
        state.last_time = train.last().map(|s| s.time);
    }
    Ok((state, history))
}

/// Hidden states and link scores from advancing a frozen model.
#[derive(Debug, Clone, Default)]
pub struct RolloutOutput {
    /// Hidden state after each evaluated snapshot.
    pub hidden_states: Vec<Matrix>,
    /// For each snapshot, the requested pairs scored with the state *before* it.
    pub scores: Vec<Vec<f64>>,
}

/// Advances `state.hidden` through `snaps` with parameters frozen.
pub fn rollout_inference(
    state: &mut ModelState,
    snaps: &[PreparedSnapshot],
    requests: &[Vec<(usize, usize)>],
) -> Result<RolloutOutput> {
    let mut last = state.last_time;
    for s in snaps {
        if last.is_some_and(|t| s.time <= t) {
            return Err(invalid(format!("snapshot {} is out of order (last processed {:?})", s.time, last)));
        }
        last = Some(s.time);
    }
    let mut out = RolloutOutput::default();
    for (k, s) in snaps.iter().enumerate() {
        let pairs = requests.get(k).map(Vec::as_slice).unwrap_or(&[]);
        let scores = pairs
            .iter()
            .map(|&(u, v)| state.link_prob(u, v, &state.hidden))
            .collect::<Result<Vec<_>>>()?;
        out.scores.push(scores);
        state.hidden = state.encode(s, &state.hidden);
        state.last_time = Some(s.time);
        out.hidden_states.push(state.hidden.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
