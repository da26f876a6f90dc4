use super::*;
use crate::hypgeom::{exp0_raw, log0_raw, norm, project_in_place, BALL_EPS};
use crate::ingest::{NodeRegistry, SnapshotEdge};
use rand::seq::SliceRandom;

fn small_config() -> ModelConfig {
    ModelConfig { embedding_dim: 4, mlp_hidden: 8, dropout: 0.0, embedding_init_std: 0.3, ..ModelConfig::default() }
}

fn snapshot(time: usize, edges: &[(usize, usize)]) -> Snapshot {
    let mut sorted = edges.to_vec();
    sorted.sort_unstable();
    Snapshot {
        time,
        edges: sorted
            .iter()
            .map(|&(source, target)| SnapshotEdge {
                source,
                target,
                time,
                weight: 1 + ((source * 7 + target * 3 + time) % 5) as u64,
                avg_rtt: 5.0 + ((source * 13 + target * 5 + time) % 40) as f64,
                std_rtt: ((source + target) % 4) as f64,
            })
            .collect(),
    }
}

fn prepare(snaps: Vec<Snapshot>, n: usize) -> Vec<PreparedSnapshot> {
    let reg = NodeRegistry::from_names((0..n).map(|i| i.to_string()).collect());
    let seq = SnapshotSequence::new(snaps, reg).unwrap();
    let norm = EdgeNormalizer::fit(&seq).unwrap();
    PreparedSnapshot::prepare_all(&seq, &norm).unwrap()
}

fn toy_pair() -> Vec<PreparedSnapshot> {
    prepare(
        vec![
            snapshot(0, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (8, 9), (9, 4), (2, 7)]),
            snapshot(1, &[(0, 2), (1, 3), (2, 1), (4, 6), (5, 7), (7, 9), (8, 4), (3, 8), (6, 0)]),
        ],
        10,
    )
}

fn random_ball_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, max_r: f64) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = rng.random_range(0.0..max_r);
        let nv = norm(&v);
        m.row_mut(i).iter_mut().zip(&v).for_each(|(o, x)| *o = x / nv * r);
    }
    m
}

#[test]
fn edge_weight_cases() {
    let mut state = ModelState::new(small_config(), 3).unwrap();
    let f = EdgeFeatureVector { log_avg_rtt_norm: 0.3, log_std_rtt_norm: 0.7, weight_norm: 0.1 };
    state.params.edge_w = Matrix::zeros(3, 1);
    state.params.edge_b = Matrix::scalar(0.0);
    assert_eq!(state.edge_weight(&f), 0.5);
    state.params.edge_b = Matrix::scalar(40.0);
    assert_eq!(state.edge_weight(&f), 1.0);
    let mut prev = 0.0;
    for b in [-5.0, -1.0, 0.0, 1.0, 5.0] {
        state.params.edge_b = Matrix::scalar(b);
        let w = state.edge_weight(&f);
        assert!(w > prev && w < 1.0);
        prev = w;
    }
    state.config.edge_features_enabled = false;
    assert_eq!(state.edge_weight(&f), 1.0);
}

#[test]
fn isolated_node_passes_through() {
    let snaps = toy_pair();
    let mut state = ModelState::new(small_config(), 12).unwrap();
    state.params.layers[0] = Matrix::identity(4);
    let out = state.message_pass(&snaps[0]);
    for node in [10, 11] {
        for (a, b) in out.row(node).iter().zip(state.params.embeddings.row(node)) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

fn tangent_mean(state: &ModelState, rows: &[usize]) -> Vec<f64> {
    let c = state.config.curvature;
    let mut acc = vec![0.0; state.config.embedding_dim];
    for &r in rows {
        for (a, t) in acc.iter_mut().zip(log0_raw(state.params.embeddings.row(r), c)) {
            *a += t;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

#[test]
fn equal_weights_give_uniform_tangent_mean() {
    let snaps = prepare(vec![snapshot(0, &[(1, 0), (2, 0), (0, 3)])], 4);
    let mut state = ModelState::new(small_config(), 4).unwrap();
    state.params.layers[0] = Matrix::identity(4);
    state.config.edge_features_enabled = false;
    let out = state.message_pass(&snaps[0]);
    let mut want = exp0_raw(&tangent_mean(&state, &[0, 1, 2]), 1.0);
    project_in_place(&mut want, state.config.curvature(), BALL_EPS);
    for (a, b) in out.row(0).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    // Node 3 has one in-neighbour: (self + node 0) / 2.
    let want = exp0_raw(&tangent_mean(&state, &[3, 0]), 1.0);
    for (a, b) in out.row(3).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn vanishing_weight_reduces_to_self() {
    let snaps = prepare(vec![snapshot(0, &[(1, 0), (0, 2)])], 3);
    let mut state = ModelState::new(small_config(), 3).unwrap();
    state.params.layers[0] = Matrix::identity(4);
    state.params.edge_w = Matrix::zeros(3, 1);
    state.params.edge_b = Matrix::scalar(-60.0);
    let out = state.message_pass(&snaps[0]);
    for (a, b) in out.row(0).iter().zip(state.params.embeddings.row(0)) {
        assert!((a - b).abs() <= 1e-6);
    }
}

fn gate_forced_state(bias: f64) -> ModelState {
    let mut state = ModelState::new(small_config(), 6).unwrap();
    let d = 4;
    state.params.gru_w[params::GATE_UPDATE] = Matrix::zeros(d, d);
    state.params.gru_u[params::GATE_UPDATE] = Matrix::zeros(d, d);
    state.params.gru_b[params::GATE_UPDATE] = Matrix::filled(1, d, bias);
    state
}

#[test]
fn update_gate_closed_keeps_hidden() {
    let state = gate_forced_state(-1e6);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let agg = random_ball_matrix(&mut rng, 6, 4, 0.9);
    let hidden = random_ball_matrix(&mut rng, 6, 4, 0.9);
    let out = state.temporal_update(&agg, &hidden);
    for (a, b) in out.data.iter().zip(&hidden.data) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn update_gate_open_takes_candidate() {
    let mut state = gate_forced_state(1e6);
    let d = 4;
    let cand_bias = [0.3, -0.2, 0.1, 0.05];
    state.params.gru_w[params::GATE_CANDIDATE] = Matrix::zeros(d, d);
    state.params.gru_u[params::GATE_CANDIDATE] = Matrix::zeros(d, d);
    state.params.gru_b[params::GATE_CANDIDATE] = Matrix::from_vec(1, d, cand_bias.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let agg = random_ball_matrix(&mut rng, 6, d, 0.9);
    let hidden = random_ball_matrix(&mut rng, 6, d, 0.9);
    let out = state.temporal_update(&agg, &hidden);
    let tanh: Vec<f64> = cand_bias.iter().map(|b: &f64| b.tanh()).collect();
    let want = exp0_raw(&tanh, 1.0);
    for r in 0..6 {
        for (a, b) in out.row(r).iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn temporal_update_stays_in_ball() {
    let mut cfg = small_config();
    cfg.curvature = 2.0;
    let mut state = ModelState::new(cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for g in 0..3 {
        for m in [&mut state.params.gru_w[g], &mut state.params.gru_u[g]] {
            m.data.iter_mut().for_each(|v| *v = rng.random_range(-20.0..20.0));
        }
    }
    let max = 1.0 / 2f64.sqrt();
    let mut hidden = Matrix::zeros(8, 4);
    for _ in 0..1000 {
        let agg = random_ball_matrix(&mut rng, 8, 4, max);
        hidden = state.temporal_update(&agg, &hidden);
        assert!((0..8).all(|r| norm(hidden.row(r)) < max));
    }
}

#[test]
fn link_prob_properties() {
    let state = ModelState::new(small_config(), 4).unwrap();
    let mut h = Matrix::zeros(4, 4);
    h.row_mut(0).copy_from_slice(&[0.2, 0.1, 0.0, 0.0]);
    h.row_mut(1).copy_from_slice(&[-0.3, 0.2, 0.1, 0.0]);
    h.row_mut(2).copy_from_slice(&[0.999, 0.0, 0.0, 0.0]);
    h.row_mut(3).copy_from_slice(&[-0.999, 0.0, 0.0, 0.0]);
    assert_eq!(state.link_prob(0, 1, &h).unwrap(), state.link_prob(1, 0, &h).unwrap());
    let same = state.link_prob(0, 0, &h).unwrap();
    assert!((same - 1.0 / ((-2.0f64).exp() + 1.0)).abs() < 1e-15);
    assert!(state.link_prob(2, 3, &h).unwrap() < 1e-10);
    assert!(matches!(state.link_prob(0, 9, &h), Err(HermitError::UnknownNode(9))));
}

#[test]
fn rtt_head_contract() {
    let mut state = ModelState::new(small_config(), 2).unwrap();
    let zu = [0.5, -0.4, 0.3, 0.2];
    let zv = [-0.1, 0.6, 0.0, -0.5];
    let a = state.rtt_head(&zu, &zv).unwrap();
    assert!(a > 0.0 && a < 1.0);
    assert_eq!(a, state.rtt_head(&zu, &zv).unwrap());
    for m in [&mut state.params.mlp_w1, &mut state.params.mlp_w2] {
        m.data.iter_mut().for_each(|v| *v = 0.0);
    }
    assert_eq!(state.rtt_head(&zu, &zv).unwrap(), 0.5);
    assert!(state.rtt_head(&zu[..3], &zv).is_err());
}

#[test]
fn negative_sampling_contract() {
    let snaps = toy_pair();
    let s = &snaps[0];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let negs = negative_sample(s, &mut rng).unwrap();
    assert_eq!(negs.len(), s.n_edges());
    let set: HashSet<_> = negs.iter().copied().collect();
    assert_eq!(set.len(), negs.len());
    let nodes: HashSet<_> = s.nodes.iter().copied().collect();
    for &(u, v) in &negs {
        assert!(u != v && !s.edge_set.contains(&(u, v)));
        assert!(nodes.contains(&u) && nodes.contains(&v));
    }
    let again = negative_sample(s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(negs, again);

    // Dense: 3 nodes, 4 of 6 ordered pairs present.
    let dense = prepare(vec![snapshot(0, &[(0, 1), (1, 2), (2, 0), (1, 0)])], 3);
    assert!(matches!(negative_sample(&dense[0], &mut rng), Err(HermitError::CompleteGraph)));
    let two = negative_sample_n(&dense[0], 2, &mut rng).unwrap();
    let set: HashSet<_> = two.into_iter().collect();
    assert_eq!(set, HashSet::from([(0, 2), (2, 1)]));
    let complete = prepare(vec![snapshot(0, &[(0, 1), (1, 0)])], 2);
    assert!(matches!(negative_sample(&complete[0], &mut rng), Err(HermitError::CompleteGraph)));
}

/// BCE and MSE recomputed from the public per-pair functions.
fn manual_loss(state: &ModelState, snaps: &[PreparedSnapshot], seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negs = negative_sample(&snaps[1], &mut rng).unwrap();
    let hidden = Matrix::zeros(state.n_nodes(), state.config.embedding_dim);
    let h = state.encode(&snaps[0], &hidden);
    let mut bce = Vec::new();
    for &(u, v) in &snaps[1].pairs() {
        bce.push(-state.link_prob(u, v, &h).unwrap().ln());
    }
    for &(u, v) in &negs {
        bce.push(-(1.0 - state.link_prob(u, v, &h).unwrap()).ln());
    }
    let mse: Vec<f64> = snaps[1]
        .pairs()
        .iter()
        .zip(&snaps[1].rtt_targets)
        .map(|(&(u, v), y)| (state.rtt_head(h.row(u), h.row(v)).unwrap() - y).powi(2))
        .collect();
    (bce.iter().sum::<f64>() / bce.len() as f64, mse.iter().sum::<f64>() / mse.len() as f64)
}

#[test]
fn loss_matches_manual_computation() {
    let snaps = toy_pair();
    for lambda in [0.0, 10.0] {
        let cfg = ModelConfig { rtt_loss_weight: lambda, ..small_config() };
        let state = ModelState::new(cfg, 10).unwrap();
        let hidden = Matrix::zeros(10, 4);
        let out = loss_total(&state, &snaps[0], &snaps[1], &hidden, &mut ChaCha8Rng::seed_from_u64(3), false).unwrap();
        let (bce, mse) = manual_loss(&state, &snaps, 3);
        assert!((out.loss.link - bce).abs() < 1e-12);
        assert!((out.loss.rtt - mse).abs() < 1e-12);
        if lambda == 0.0 {
            assert_eq!(out.loss.total, out.loss.link);
        } else {
            assert_eq!(out.loss.total, out.loss.link + lambda * out.loss.rtt);
        }
    }
    let parts = LossBreakdown { link: 0.1, rtt: 0.02, total: 0.1 + 10.0 * 0.02 };
    assert!((parts.total - 0.3).abs() < 1e-15);
}

#[test]
fn empty_next_snapshot_drops_rtt_term() {
    let snaps = prepare(vec![snapshot(0, &[(0, 1), (1, 2)]), snapshot(1, &[])], 3);
    let state = ModelState::new(small_config(), 3).unwrap();
    let out = loss_total(&state, &snaps[0], &snaps[1], &Matrix::zeros(3, 4), &mut ChaCha8Rng::seed_from_u64(0), true)
        .unwrap();
    assert_eq!(out.loss.total, 0.0);
    assert!(out.grads.iter().all(|g| g.data.iter().all(|v| *v == 0.0)));
}

fn total_loss(state: &ModelState, snaps: &[PreparedSnapshot], hidden: &Matrix) -> f64 {
    loss_total(state, &snaps[0], &snaps[1], hidden, &mut ChaCha8Rng::seed_from_u64(77), false).unwrap().loss.total
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let snaps = toy_pair();
    let mut state = ModelState::new(ModelConfig { gnn_layers: 2, ..small_config() }, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let hidden = random_ball_matrix(&mut rng, 10, 4, 0.6);
    let out = loss_total(&state, &snaps[0], &snaps[1], &hidden, &mut ChaCha8Rng::seed_from_u64(77), false).unwrap();

    let sizes: Vec<usize> = state.params.tensors().iter().map(|(_, _, m)| m.data.len()).collect();
    let mut coords: Vec<(usize, usize)> =
        sizes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect();
    coords.shuffle(&mut rng);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &(t, i) in coords.iter().take(100) {
        let orig = state.params.tensors_mut()[t].data[i];
        state.params.tensors_mut()[t].data[i] = orig + h;
        let up = total_loss(&state, &snaps, &hidden);
        state.params.tensors_mut()[t].data[i] = orig - h;
        let down = total_loss(&state, &snaps, &hidden);
        state.params.tensors_mut()[t].data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = out.grads[t].data[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn optimizer_keeps_manifold_constraints() {
    let snaps = toy_pair();
    let cfg = ModelConfig { learning_rate: 0.05, ..small_config() };
    let mut state = ModelState::new(cfg, 10).unwrap();
    let mut opt = Optimizer::new(&state.params);
    let c = state.config.curvature();
    for step in 0..30 {
        let out = loss_total(&state, &snaps[0], &snaps[1], &Matrix::zeros(10, 4), &mut ChaCha8Rng::seed_from_u64(step), true)
            .unwrap();
        opt.step(&mut state.params, &out.grads, 0.05, c);
        assert!((0..10).all(|r| norm(state.params.embeddings.row(r)) < 1.0));
        assert!(state.params.layers.iter().all(|w| orthogonality_error(w) < 1e-3));
    }
}

/// Two communities of 5 nodes; each snapshot samples intra-community edges.
fn two_communities(n_snaps: usize, seed: u64) -> Vec<PreparedSnapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snaps = (0..n_snaps)
        .map(|t| {
            let mut edges = Vec::new();
            for u in 0..10 {
                for v in 0..10 {
                    if u != v && u / 5 == v / 5 && rng.random::<f64>() < 0.5 {
                        edges.push((u, v));
                    }
                }
            }
            snapshot(t, &edges)
        })
        .collect();
    prepare(snaps, 10)
}

#[test]
fn toy_training_reduces_loss() {
    let snaps = two_communities(20, 1);
    let cfg = ModelConfig { max_epochs: 5, early_stop_patience: 100, ..small_config() };
    let (_, hist) = train(10, &snaps[..16], &snaps[16..], &cfg).unwrap();
    assert_eq!(hist.epochs.len(), 5);
    assert!(hist.epochs[4].train_loss < hist.epochs[0].train_loss, "{:?}", hist.epochs);
}

#[test]
fn training_is_deterministic_and_selects_by_validation() {
    let snaps = two_communities(12, 2);
    let cfg = ModelConfig { max_epochs: 6, early_stop_patience: 2, learning_rate: 0.01, ..small_config() };
    let (a, ha) = train(10, &snaps[..9], &snaps[9..], &cfg).unwrap();
    let (b, hb) = train(10, &snaps[..9], &snaps[9..], &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    let best = ha
        .epochs
        .iter()
        .fold(None::<&EpochRecord>, |acc, e| match acc {
            Some(x) if x.val_auc.unwrap() >= e.val_auc.unwrap() => Some(x),
            _ => Some(e),
        })
        .unwrap();
    assert_eq!(ha.best_epoch, best.epoch);
    assert!(ha.to_csv().starts_with("epoch,train_loss,val_auc\n"));
}

#[test]
fn rollout_is_associative() {
    let snaps = two_communities(6, 3);
    let state = ModelState::new(small_config(), 10).unwrap();
    let mut one = state.clone();
    let all = rollout_inference(&mut one, &snaps, &[]).unwrap();
    let mut two = state.clone();
    rollout_inference(&mut two, &snaps[..2], &[]).unwrap();
    rollout_inference(&mut two, &snaps[2..], &[]).unwrap();
    assert_eq!(one.hidden, two.hidden);
    assert_eq!(all.hidden_states.len(), 6);
    assert!(all.hidden_states.iter().all(|h| (0..10).all(|r| norm(h.row(r)) < 1.0)));
    assert_eq!(rollout(&state, &snaps, &state.hidden).last().unwrap(), &one.hidden);

    let mut idle = state.clone();
    let out = rollout_inference(&mut idle, &[], &[]).unwrap();
    assert!(out.hidden_states.is_empty());
    assert_eq!(idle.hidden, state.hidden);

    assert!(rollout_inference(&mut one, &snaps[..1], &[]).is_err());
}

#[test]
fn rollout_scores_use_state_before_snapshot() {
    let snaps = two_communities(3, 4);
    let mut state = ModelState::new(small_config(), 10).unwrap();
    let start = state.hidden.clone();
    let out = rollout_inference(&mut state, &snaps, &[vec![(0, 1)], vec![(2, 3), (3, 2)]]).unwrap();
    assert_eq!(out.scores[0], vec![state.link_prob(0, 1, &start).unwrap()]);
    assert_eq!(out.scores[1][0], state.link_prob(2, 3, &out.hidden_states[0]).unwrap());
    assert_eq!(out.scores[1][0], out.scores[1][1]);
    assert!(out.scores[2].is_empty());
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    assert!(ModelConfig { embedding_dim: 1, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { dropout: 1.0, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { rtt_loss_weight: -1.0, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { curvature: 0.0, ..ModelConfig::default() }.validate().is_err());
}
