//! Synthetic scale-free temporal graphs with topology-dependent RTTs.
//!
//! Every node gets a hidden angle on a circle. Snapshot 0 grows by
//! preferential attachment: each new node links to `m` older nodes (edges
//! directed new → old) chosen with weight `(degree + 1) · exp(−β·Δθ)`, where
//! `Δθ` is the angular gap and `β = angular_locality`. Every later snapshot
//! drops each edge with probability `edge_churn_prob` and adds as many fresh
//! edges from a uniform source to a target drawn with the same weight. The hub is the
//! highest-degree node of snapshot 0; an edge's RTT is
//! `rtt_base_ms · depth · exp(σ·N(0,1))`, where `depth` is the BFS distance
//! from the hub of the deeper endpoint in that snapshot's undirected graph.

use std::collections::{BTreeSet, VecDeque};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HermitError, Result};
use crate::ingest::{NodeRegistry, Snapshot, SnapshotEdge, SnapshotSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_snapshots: usize,
    pub attachment_m: usize,
    pub edge_churn_prob: f64,
    pub rtt_base_ms: f64,
    pub rtt_noise_sigma: f64,
    /// Similarity decay `β`; 0 gives plain degree-proportional attachment.
    pub angular_locality: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            n_snapshots: 60,
            attachment_m: 2,
            edge_churn_prob: 0.05,
            rtt_base_ms: 10.0,
            rtt_noise_sigma: 0.1,
            angular_locality: 8.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HermitError::Infeasible(m));
        if self.attachment_m == 0 || self.n_nodes <= self.attachment_m {
            return fail(format!("need n_nodes > attachment_m >= 1 (got {} and {})", self.n_nodes, self.attachment_m));
        }
        if self.n_snapshots == 0 {
            return fail("n_snapshots must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.edge_churn_prob) {
            return fail("edge_churn_prob must lie in [0, 1]".into());
        }
        if !(self.rtt_base_ms > 0.0 && self.rtt_base_ms.is_finite()) {
            return fail("rtt_base_ms must be positive".into());
        }
        if !(self.rtt_noise_sigma >= 0.0 && self.rtt_noise_sigma.is_finite()) {
            return fail("rtt_noise_sigma must be non-negative".into());
        }
        if !(self.angular_locality >= 0.0 && self.angular_locality.is_finite()) {
            return fail("angular_locality must be non-negative".into());
        }
        Ok(())
    }
}

/// Undirected degree of every node for a directed edge set.
pub fn degrees(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let mut d = vec![0; n];
    for &(u, v) in edges {
        d[u] += 1;
        d[v] += 1;
    }
    d
}

/// BFS hop distance from `hub` ignoring direction; unreachable nodes get
/// one more than the largest finite distance.
pub fn hub_depths(n: usize, edges: &BTreeSet<(usize, usize)>, hub: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut depth = vec![usize::MAX; n];
    depth[hub] = 0;
    let mut queue = VecDeque::from([hub]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let far = depth.iter().filter(|&&d| d != usize::MAX).max().copied().unwrap_or(0) + 1;
    depth.iter_mut().filter(|d| **d == usize::MAX).for_each(|d| *d = far);
    depth
}

/// Attachment kernel over the hidden angles.
struct Affinity {
    angle: Vec<f64>,
    beta: f64,
}

impl Affinity {
    fn new<R: Rng>(n: usize, beta: f64, rng: &mut R) -> Self {
        Self { angle: (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(), beta }
    }

    fn gap(&self, u: usize, v: usize) -> f64 {
        let d = (self.angle[u] - self.angle[v]).abs();
        d.min(std::f64::consts::TAU - d)
    }

    /// Attachment weights of every node as a target for `u`.
    fn weights(&self, u: usize, degree: &[usize], candidates: usize) -> Vec<f64> {
        (0..candidates)
            .map(|v| if v == u { 0.0 } else { (degree[v] + 1) as f64 * (-self.beta * self.gap(u, v)).exp() })
            .collect()
    }
}

fn draw<R: Rng>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let pick = WeightedIndex::new(weights).map_err(|e| HermitError::Infeasible(e.to_string()))?;
    Ok(pick.sample(rng))
}

fn preferential_growth<R: Rng>(n: usize, m: usize, aff: &Affinity, rng: &mut R) -> Result<BTreeSet<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    let mut degree = vec![0; n];
    for u in 0..=m {
        for v in 0..u {
            edges.insert((u, v));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    for u in m + 1..n {
        let mut w = aff.weights(u, &degree, u);
        for _ in 0..m {
            let v = draw(&w, rng)?;
            w[v] = 0.0;
            edges.insert((u, v));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    Ok(edges)
}

fn churn<R: Rng>(
    n: usize,
    edges: &BTreeSet<(usize, usize)>,
    p: f64,
    aff: &Affinity,
    rng: &mut R,
) -> Result<BTreeSet<(usize, usize)>> {
    let mut kept = BTreeSet::new();
    let mut removed = 0;
    for &e in edges {
        if rng.random::<f64>() < p {
            removed += 1;
        } else {
            kept.insert(e);
        }
    }
    let degree = degrees(n, &kept);
    let mut added = 0;
    let mut attempts = 0;
    while added < removed {
        attempts += 1;
        if attempts > 1000 * (removed + 10) {
            return Err(HermitError::Infeasible("graph too dense to rewire churned edges".into()));
        }
        let u = rng.random_range(0..n);
        let v = draw(&aff.weights(u, &degree, n), rng)?;
        if kept.contains(&(u, v)) || kept.contains(&(v, u)) {
            continue;
        }
        kept.insert((u, v));
        added += 1;
    }
    Ok(kept)
}

pub fn generate(config: &SynthConfig) -> Result<SnapshotSequence> {
    config.validate()?;
    let n = config.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let geometric = Geometric::new(0.5).expect("valid probability");
    let aff = Affinity::new(n, config.angular_locality, &mut rng);
    let mut edges = preferential_growth(n, config.attachment_m, &aff, &mut rng)?;
    let deg0 = degrees(n, &edges);
    let hub = (0..n).max_by_key(|&i| (deg0[i], std::cmp::Reverse(i))).unwrap_or(0);

    let mut snapshots = Vec::with_capacity(config.n_snapshots);
    for t in 0..config.n_snapshots {
        if t > 0 {
            edges = churn(n, &edges, config.edge_churn_prob, &aff, &mut rng)?;
        }
        let depth = hub_depths(n, &edges, hub);
        let snap_edges = edges
            .iter()
            .map(|&(u, v)| {
                let scale = config.rtt_base_ms * depth[u].max(depth[v]) as f64;
                let z: f64 = StandardNormal.sample(&mut rng);
                let noise = (config.rtt_noise_sigma * z).exp();
                SnapshotEdge {
                    source: u,
                    target: v,
                    time: t,
                    weight: geometric.sample(&mut rng) + 1,
                    avg_rtt: scale * noise,
                    std_rtt: scale * (noise - 1.0).abs(),
                }
            })
            .collect();
        snapshots.push(Snapshot { time: t, edges: snap_edges });
    }
    let registry = NodeRegistry::from_names((0..n).map(|i| i.to_string()).collect());
    SnapshotSequence::new(snapshots, registry)
}
