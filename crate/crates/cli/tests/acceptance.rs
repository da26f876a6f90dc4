//! Acceptance gate: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::Weekday;
use hermit_cli::checkpoint;
use hermit_core::encoder::{loss_total, train_from};
use hermit_core::eval::{auc, average_precision, temporal_split};
use hermit_core::forest::{fit_forest, fit_tree, FeatureMatrix};
use hermit_core::hypgeom::{
    exp0, fermi_dirac, log0, mobius_add, mobius_matvec, norm, poincare_dist, project_to_ball, BALL_EPS,
};
use hermit_core::ingest::{aggregate_daily, prune_top_degree, trace_to_edge_samples, weekly_sample, EdgeSample, Hop};
use hermit_core::{
    BallPoint, Curvature, EdgeFeatureVector, EdgeNormalizer, FermiDiracParams, ForestConfig, HermitModel, Matrix,
    ModelConfig, ModelState, NodeRegistry, PipelineConfig, PreparedSnapshot, ScoredPair, Snapshot, SnapshotEdge,
    SnapshotSequence, SynthConfig, TangentVector, TraceRecord,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn random_ball(rng: &mut ChaCha8Rng, d: usize, max_r: f64, c: Curvature) -> BallPoint {
    let r = rng.random_range(0.0..max_r);
    BallPoint::new(random_unit(rng, d).into_iter().map(|x| x * r).collect(), c).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn geometry_suite() -> Outcome {
    let start = Instant::now();
    let c = Curvature::new(1.0).unwrap();
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let origin = BallPoint::origin(d);
    let (mut ident, mut inverse, mut explog, mut logexp, mut sym, mut tri) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut max_norm = 0.0f64;
    for _ in 0..10_000 {
        let x = random_ball(&mut rng, d, 0.999, c);
        let y = random_ball(&mut rng, d, 0.999, c);
        let z = random_ball(&mut rng, d, 0.999, c);
        let neg_x = BallPoint::new(x.coords().iter().map(|v| -v).collect(), c).unwrap();

        let sum = mobius_add(&origin, &x, c).unwrap();
        ident = ident.max(max_abs_diff(sum.coords(), x.coords()));
        let inv = mobius_add(&neg_x, &x, c).unwrap();
        inverse = inverse.max(norm(inv.coords()));

        let r = rng.random_range(0.0..=3.0);
        let v = TangentVector::new(random_unit(&mut rng, d).into_iter().map(|t| t * r).collect()).unwrap();
        let ev = exp0(&v, c);
        explog = explog.max(max_abs_diff(log0(&ev, c).coords(), v.coords()));
        let p = random_ball(&mut rng, d, 0.99, c);
        logexp = logexp.max(max_abs_diff(exp0(&log0(&p, c), c).coords(), p.coords()));

        let dxy = poincare_dist(&x, &y, c).unwrap();
        let dyx = poincare_dist(&y, &x, c).unwrap();
        sym = sym.max((dxy - dyx).abs());
        check(poincare_dist(&x, &x, c).unwrap() < 1e-9, "d(x, x) not within 1e-9 of 0")?;
        check(x == y || dxy > 0.0, "distinct points at distance 0")?;
        let dxz = poincare_dist(&x, &z, c).unwrap();
        let dzy = poincare_dist(&z, &y, c).unwrap();
        tri = tri.max(dxy - (dxz + dzy));

        let s1 = rng.random_range(0.0..30.0);
        let s2 = s1 + rng.random_range(0.01..5.0);
        let (f1, f2) = (fermi_dirac(s1, FermiDiracParams::default()), fermi_dirac(s2, FermiDiracParams::default()));
        check(f1 > 0.0 && f1 < 1.0 && f2 > 0.0 && f2 < 1.0 && f1 > f2, format!("fermi_dirac not monotone at {s1}"))?;

        let m: Vec<f64> = (0..d * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let far: Vec<f64> = random_unit(&mut rng, d).into_iter().map(|t| t * rng.random_range(0.5..5.0)).collect();
        for b in [&sum, &inv, &ev, &mobius_matvec(&m, &x, c).unwrap(), &project_to_ball(&far, c, BALL_EPS)] {
            max_norm = max_norm.max(b.norm());
        }
    }
    let elapsed = start.elapsed();
    check(ident <= 1e-9, format!("left identity error {ident:e}"))?;
    check(inverse <= 1e-9, format!("left inverse error {inverse:e}"))?;
    check(explog <= 1e-6, format!("log0(exp0(v)) error {explog:e}"))?;
    check(logexp <= 1e-6, format!("exp0(log0(x)) error {logexp:e}"))?;
    check(sym <= 1e-9, format!("distance asymmetry {sym:e}"))?;
    check(tri <= 1e-7, format!("triangle inequality violated by {tri:e}"))?;
    check(max_norm < 1.0, format!("ball output with norm {max_norm}"))?;
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!(
        "10000 cases d=16: identity {ident:.1e}, inverse {inverse:.1e}, log∘exp {explog:.1e}, exp∘log {logexp:.1e}, \
         triangle slack {tri:.1e}, max norm {max_norm:.8}, {:.2}s",
        elapsed.as_secs_f64()
    ))
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

fn registry(n: usize) -> NodeRegistry {
    NodeRegistry::from_names((0..n).map(|i| i.to_string()).collect())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let seq = SnapshotSequence::new(
        vec![
            snapshot(0, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (8, 9), (9, 4), (2, 7)]),
            snapshot(1, &[(0, 2), (1, 3), (2, 1), (4, 6), (5, 7), (7, 9), (8, 4), (3, 8), (6, 0)]),
        ],
        registry(10),
    )
    .unwrap();
    let norm_params = EdgeNormalizer::fit(&seq).unwrap();
    let snaps = PreparedSnapshot::prepare_all(&seq, &norm_params).unwrap();
    let cfg = ModelConfig { embedding_dim: 4, mlp_hidden: 8, embedding_init_std: 0.3, gnn_layers: 2, ..ModelConfig::default() };
    let mut state = ModelState::new(cfg, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let c = state.config.curvature();
    let mut hidden = Matrix::zeros(10, 4);
    for r in 0..10 {
        let p = random_ball(&mut rng, 4, 0.6, c);
        hidden.row_mut(r).copy_from_slice(p.coords());
    }
    let loss = |s: &ModelState| {
        loss_total(s, &snaps[0], &snaps[1], &hidden, &mut ChaCha8Rng::seed_from_u64(77), false).unwrap()
    };
    let analytic = loss(&state).grads;
    let sizes: Vec<usize> = state.params.tensors().iter().map(|(_, _, m)| m.data.len()).collect();
    let mut coords: Vec<(usize, usize)> =
        sizes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect();
    coords.shuffle(&mut rng);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for &(t, i) in coords.iter().take(100) {
        let orig = state.params.tensors_mut()[t].data[i];
        state.params.tensors_mut()[t].data[i] = orig + h;
        let up = loss(&state).loss.total;
        state.params.tensors_mut()[t].data[i] = orig - h;
        let down = loss(&state).loss.total;
        state.params.tensors_mut()[t].data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[t].data[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    let elapsed = start.elapsed();
    check(worst < 1e-3, format!("worst relative error {worst:e}"))?;
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("100 coordinates, worst relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()))
}

fn sp(prob: f64, label: bool) -> ScoredPair {
    ScoredPair { u: 0, v: 0, label, prob }
}

fn brute_auc(s: &[ScoredPair]) -> f64 {
    let mut twice_wins = 0u64;
    for a in s.iter().filter(|x| x.label) {
        for b in s.iter().filter(|x| !x.label) {
            twice_wins += if a.prob > b.prob { 2 } else if a.prob == b.prob { 1 } else { 0 };
        }
    }
    let p = s.iter().filter(|x| x.label).count();
    (twice_wins as f64 / 2.0) / (p * (s.len() - p)) as f64
}

fn brute_ap(s: &[ScoredPair]) -> f64 {
    // Rank of item i: items with a higher score, plus equal scores listed earlier.
    let rank = |i: usize| {
        s.iter().enumerate().filter(|(j, o)| o.prob > s[i].prob || (o.prob == s[i].prob && *j < i)).count() + 1
    };
    let mut ranked: Vec<(usize, usize)> = (0..s.len()).filter(|&i| s[i].label).map(|i| (rank(i), i)).collect();
    ranked.sort_unstable();
    let mut total = 0.0;
    for (hits, (r, _)) in ranked.iter().enumerate() {
        total += (hits + 1) as f64 / *r as f64;
    }
    total / ranked.len() as f64
}

fn metric_oracles() -> Outcome {
    let mixed = [sp(0.8, true), sp(0.5, false), sp(0.3, true), sp(0.1, false)];
    check(auc(&mixed).unwrap() == 0.75, "worked AUC example is not 0.75")?;
    let ap_case = [sp(0.9, true), sp(0.8, false), sp(0.7, true)];
    let ap = average_precision(&ap_case).unwrap();
    check((ap - 5.0 / 6.0).abs() < 1e-15, format!("worked AP example gives {ap}, not 5/6"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let n = rng.random_range(2..=1000);
        // Coarse score grid so ties are common.
        let levels = rng.random_range(2..50);
        let mut s: Vec<ScoredPair> =
            (0..n).map(|_| sp(rng.random_range(0..levels) as f64 / levels as f64, rng.random_bool(0.5))).collect();
        s[0].label = true;
        s[1].label = false;
        let (a, b) = (auc(&s).unwrap(), brute_auc(&s));
        check(a == b, format!("case {case}: auc {a} vs brute force {b}"))?;
        let (a, b) = (average_precision(&s).unwrap(), brute_ap(&s));
        check(a == b, format!("case {case}: ap {a} vs brute force {b}"))?;
    }
    Ok("worked examples 0.75 and 5/6 (to 1 ulp); 200 random tied instances equal to brute force bit for bit".into())
}

fn cart_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut first: Vec<usize> = (0..500).collect();
    first.shuffle(&mut rng);
    let rows: Vec<Vec<f64>> = first
        .iter()
        .map(|&k| vec![k as f64 / 500.0, rng.random_range(-1.0..1.0), rng.random_range(0.0..10.0)])
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| (3.0 * r[0]).sin() + r[1] * r[2] + rng.random_range(-0.5..0.5)).collect();
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let exact = ForestConfig {
        n_trees: 1,
        max_depth: usize::MAX,
        max_features_fraction: 1.0,
        min_samples_leaf: 1,
        bootstrap: false,
        ..ForestConfig::default()
    };
    let tree = fit_tree(&x, &y, &exact, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let sse: f64 = rows.iter().zip(&y).map(|(r, t)| (tree.predict(r) - t).powi(2)).sum();
    let rmse = (sse / y.len() as f64).sqrt();
    check(rmse == 0.0, format!("training RMSE {rmse}"))?;

    let forest = fit_forest(&x, &y, &ForestConfig { n_trees: 25, ..ForestConfig::default() }).unwrap();
    for r in rows.iter().take(200) {
        let mean = forest.trees.iter().map(|t| t.predict(r)).sum::<f64>() / forest.trees.len() as f64;
        check(forest.predict(r).unwrap() == mean, "forest prediction differs from the mean of its trees")?;
    }
    Ok(format!("single tree training RMSE {rmse} on 500 rows ({} leaves); 25-tree mean identity exact", tree.n_leaves()))
}

fn trace(src: &str, hops: &[(&str, f64)]) -> TraceRecord {
    TraceRecord {
        src: src.into(),
        dst: hops.last().unwrap().0.into(),
        start_sec: 0,
        stop_reason: "COMPLETED".into(),
        hop_count: hops.len(),
        hops: hops.iter().map(|(a, r)| Hop { addr: (*a).into(), rtt: *r }).collect(),
    }
}

fn ingestion_golden() -> Outcome {
    let mut reg = NodeRegistry::new();
    let got = trace_to_edge_samples(&trace("10.0.0.1", &[("10.0.0.2", 5.0), ("10.0.0.3", 12.0)]), 0, &mut reg);
    let want = vec![
        EdgeSample { source: 0, target: 1, day: 0, rtt: 5.0 },
        EdgeSample { source: 1, target: 2, day: 0, rtt: 7.0 },
    ];
    check(got == want, format!("consecutive-hop edges {got:?}"))?;
    let clamped = trace_to_edge_samples(&trace("10.0.0.1", &[("10.0.0.2", 10.0), ("10.0.0.3", 8.0)]), 0, &mut reg);
    check(clamped[1].rtt == 0.0, "negative hop delta not clamped")?;
    let looped = trace_to_edge_samples(&trace("10.0.0.1", &[("10.0.0.2", 5.0), ("10.0.0.2", 6.0)]), 0, &mut reg);
    check(looped.len() == 1 && looped[0].rtt == 5.0, "self-loop not skipped")?;

    let pair = [EdgeSample { source: 0, target: 1, day: 4, rtt: 7.0 }, EdgeSample { source: 0, target: 1, day: 4, rtt: 9.0 }];
    let agg = aggregate_daily(&pair, registry(2)).unwrap();
    let e = agg.snapshots[0].edges[0];
    check((e.weight, e.avg_rtt, e.std_rtt) == (2, 8.0, 1.0), format!("aggregate {e:?}"))?;
    let single = aggregate_daily(&pair[..1], registry(2)).unwrap();
    check(single.snapshots[0].edges[0].std_rtt == 0.0, "single sample std not 0")?;
    let days: Vec<EdgeSample> =
        [8, 3, 5].iter().map(|&day| EdgeSample { source: 0, target: 1, day, rtt: 1.0 }).collect();
    let times: Vec<usize> = aggregate_daily(&days, registry(2)).unwrap().snapshots.iter().map(|s| s.time).collect();
    check(times == [0, 1, 2], format!("re-indexed times {times:?}"))?;

    use Weekday::*;
    let table = [
        (Mon, 3, true), (Tue, 3, false), (Wed, 3, true), (Thu, 3, false), (Fri, 3, false), (Sat, 3, true), (Sun, 3, false),
        (Mon, 4, false), (Tue, 4, true), (Wed, 4, false), (Thu, 4, false), (Fri, 4, true), (Sat, 4, false), (Sun, 4, true),
    ];
    for (day, week, keep) in table {
        check(weekly_sample(day, week) == keep, format!("weekly rule wrong for {day:?} week {week}"))?;
    }

    let star: Vec<EdgeSample> = (1..=99).map(|leaf| EdgeSample { source: 0, target: leaf, day: 0, rtt: 1.0 }).collect();
    let kept = prune_top_degree(star, 0.05).unwrap();
    let nodes: BTreeSet<usize> = kept.iter().flat_map(|s| [s.source, s.target]).collect();
    check(nodes == BTreeSet::from([0, 1, 2, 3, 4]), format!("star pruning kept {nodes:?}"))?;
    check(kept.len() == 4 && kept.iter().all(|s| s.source == 0), "star pruning kept non center-leaf samples")?;
    Ok("hop edges, clamp, self-loop, weight 2/avg 8.0/std 1.0, re-indexing, 14-day weekly table, star pruning exact".into())
}

fn normalization_round_trip() -> Outcome {
    let seq = hermit_core::generate(&SynthConfig { n_nodes: 120, n_snapshots: 30, ..SynthConfig::default() }).unwrap();
    let split = temporal_split(seq.len(), &Default::default()).unwrap();
    let train = seq.slice(split.train);
    let n = EdgeNormalizer::fit(&train).unwrap();
    let mut worst = 0.0f64;
    let mut count = 0;
    for e in train.snapshots.iter().flat_map(|s| &s.edges) {
        let back = n.avg.to_rtt_ms(n.target(e));
        worst = worst.max((back - e.avg_rtt).abs() / e.avg_rtt.abs().max(f64::MIN_POSITIVE));
        count += 1;
    }
    check(worst <= 1e-9, format!("worst relative error {worst:e}"))?;
    Ok(format!("{count} training RTTs recovered, worst relative error {worst:.2e}"))
}

struct SeedResult {
    auc: f64,
    new_auc: f64,
    rmse: f64,
    tab_rmse: f64,
    secs: f64,
}

fn synthetic_end_to_end() -> Outcome {
    let mut results = Vec::new();
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let start = Instant::now();
        let seq = hermit_core::generate(&SynthConfig { n_nodes: 300, n_snapshots: 60, seed, ..SynthConfig::default() })
            .map_err(|e| e.to_string())?;
        let model = hermit_core::fit(&seq, &PipelineConfig::default()).map_err(|e| e.to_string())?;
        let report = hermit_core::evaluate(&model, &seq).map_err(|e| e.to_string())?;
        let r = SeedResult {
            auc: report.auc.unwrap_or(f64::NAN),
            new_auc: report.new_auc.unwrap_or(f64::NAN),
            rmse: report.rmse_ms.global.unwrap_or(f64::NAN),
            tab_rmse: report.baseline_rmse_ms.and_then(|b| b.global).unwrap_or(f64::NAN),
            secs: start.elapsed().as_secs_f64(),
        };
        lines.push(format!(
            "seed {seed}: auc {:.4} new_auc {:.4} rmse {:.2} tabular {:.2} ({:.0}s)",
            r.auc, r.new_auc, r.rmse, r.tab_rmse, r.secs
        ));
        eprintln!("    {}", lines.last().unwrap());
        results.push(r);
    }
    let med = |f: fn(&SeedResult) -> f64| median(results.iter().map(f).collect());
    let (auc_m, new_m, rmse_m, tab_m) = (med(|r| r.auc), med(|r| r.new_auc), med(|r| r.rmse), med(|r| r.tab_rmse));
    let slowest = results.iter().map(|r| r.secs).fold(0.0, f64::max);
    let summary = format!(
        "median auc {auc_m:.4}, new_auc {new_m:.4}, rmse {rmse_m:.2} vs tabular {tab_m:.2}, slowest seed {slowest:.0}s"
    );
    check(auc_m >= 0.90, format!("{summary}: median AUC below 0.90"))?;
    check(new_m >= 0.85, format!("{summary}: median New AUC below 0.85"))?;
    check(rmse_m <= tab_m, format!("{summary}: fusion RMSE above tabular"))?;
    check(slowest < 600.0, format!("{summary}: a seed exceeded 10 minutes"))?;
    Ok(summary)
}

fn ablation_consistency() -> Outcome {
    let seq = hermit_core::generate(&SynthConfig { n_nodes: 60, n_snapshots: 10, ..SynthConfig::default() }).unwrap();
    let norm_params = EdgeNormalizer::fit(&seq).unwrap();
    let snaps = PreparedSnapshot::prepare_all(&seq, &norm_params).unwrap();
    let base = ModelConfig { max_epochs: 1, ..ModelConfig::default() };
    let on = ModelState::new(base.clone(), seq.num_nodes).unwrap();
    let off = ModelState::new(ModelConfig { edge_features_enabled: false, ..base }, seq.num_nodes).unwrap();
    check(on.params == off.params, "the flag changed parameter initialization")?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let f = EdgeFeatureVector {
            log_avg_rtt_norm: rng.random(),
            log_std_rtt_norm: rng.random(),
            weight_norm: rng.random(),
        };
        check(off.edge_weight(&f) == 1.0, "disabled edge_weight is not 1")?;
    }
    let h = Matrix::zeros(seq.num_nodes, on.config.embedding_dim);
    check(on.message_pass(&snaps[1]) != off.message_pass(&snaps[1]), "edge weights have no effect when enabled")?;
    check(on.rtt_head(h.row(0), h.row(1)).unwrap() == off.rtt_head(h.row(0), h.row(1)).unwrap(), "rtt head differs")?;

    // Constant edge weight: sigmoid(0·x + 40) rounds to exactly 1 in f64.
    let force = |mut s: ModelState| {
        s.params.edge_w = Matrix::zeros(3, 1);
        s.params.edge_b = Matrix::scalar(40.0);
        s
    };
    let (on, off) = (force(on), force(off));
    check(on.message_pass(&snaps[1]) == off.message_pass(&snaps[1]), "forced weights still change message passing")?;
    let split = temporal_split(snaps.len(), &Default::default()).unwrap();
    let run = |s: ModelState| {
        train_from(s, &snaps[split.train.clone()], &snaps[split.val.clone()]).unwrap().1.epochs[0].train_loss
    };
    let (l_on, l_off) = (run(on), run(off));
    let diff = (l_on - l_off).abs();
    check(diff <= 1e-9, format!("epoch-1 losses {l_on} vs {l_off}"))?;
    Ok(format!("disabled weight ≡ 1 on 1000 inputs; forced-constant epoch-1 losses {l_on:.12} vs {l_off:.12} (diff {diff:.1e})"))
}

fn hermit(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hermit")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "hermit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn run_pipeline(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>) {
    let p = |name: &str| dir.join(format!("{tag}_{name}")).to_str().unwrap().to_string();
    hermit(&["synth", "--nodes", "120", "--snapshots", "30", "--seed", "1024", "--out", &p("data.csv")]);
    hermit(&["train", "--data", &p("data.csv"), "--out", &p("model.ckpt"), "--seed", "1024"]);
    hermit(&["evaluate", "--model", &p("model.ckpt"), "--data", &p("data.csv"), "--report", &p("report.json"), "--seed", "1024"]);
    (std::fs::read(p("model.ckpt")).unwrap(), std::fs::read(p("report.json")).unwrap())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt_a, rep_a) = run_pipeline(dir.path(), "a");
    let (ckpt_b, rep_b) = run_pipeline(dir.path(), "b");
    check(ckpt_a == ckpt_b, "checkpoints differ")?;
    check(rep_a == rep_b, "reports differ")?;
    Ok(format!("synth → train → evaluate twice with seed 1024: {} checkpoint bytes and {} report bytes identical", ckpt_a.len(), rep_a.len()))
}

fn checkpoint_round_trip() -> Outcome {
    let seq = hermit_core::generate(&SynthConfig { n_nodes: 100, n_snapshots: 24, seed: 5, ..SynthConfig::default() })
        .unwrap();
    let cfg = PipelineConfig::default();
    let cfg = PipelineConfig { model: ModelConfig { max_epochs: 10, ..cfg.model }, ..cfg };
    let model: HermitModel = hermit_core::fit(&seq, &cfg).unwrap();
    let bytes = checkpoint::to_bytes(&model).unwrap();
    let loaded = checkpoint::from_bytes(&bytes).unwrap();
    check(checkpoint::to_bytes(&loaded).unwrap() == bytes, "re-saving a loaded checkpoint changes its bytes")?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = model.n_nodes();
    for _ in 0..1000 {
        let (u, v, k) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..model.hidden_states.len()));
        let a = model.predict_pair(u, v, k).unwrap();
        let b = loaded.predict_pair(u, v, k).unwrap();
        check(
            a.prob.to_bits() == b.prob.to_bits() && a.rtt_ms.to_bits() == b.rtt_ms.to_bits(),
            format!("pair ({u}, {v}) at {k}: {a:?} vs {b:?}"),
        )?;
    }
    Ok(format!("1000 pairs bit-identical after save/load ({} bytes)", bytes.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("geometry suite", geometry_suite),
        ("gradient check", gradient_check),
        ("metric oracles", metric_oracles),
        ("CART oracle", cart_oracle),
        ("ingestion golden", ingestion_golden),
        ("normalization round-trip", normalization_round_trip),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("ablation consistency", ablation_consistency),
        ("determinism", determinism),
        ("checkpoint round-trip", checkpoint_round_trip),
    ];
    let only: Option<usize> = std::env::var("HERMIT_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
