use criterion::{black_box, criterion_group, criterion_main, Criterion};
use hermit_bench::{ball_points, encoder_fixture, regression_rows};
use hermit_core::encoder::{loss_total, rollout};
use hermit_core::forest::fit_forest;
use hermit_core::hypgeom::{dist_raw, exp0_raw, log0_raw, mobius_add_raw};
use hermit_core::{ForestConfig, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn geometry(c: &mut Criterion) {
    let pts = ball_points(256, 16, 1);
    let mut g = c.benchmark_group("geometry_d16");
    g.bench_function("mobius_add", |b| {
        b.iter(|| pts.windows(2).map(|w| mobius_add_raw(&w[0], &w[1], 1.0)[0]).sum::<f64>())
    });
    g.bench_function("poincare_dist", |b| b.iter(|| pts.windows(2).map(|w| dist_raw(&w[0], &w[1], 1.0)).sum::<f64>()));
    g.bench_function("exp0_log0", |b| b.iter(|| pts.iter().map(|p| exp0_raw(&log0_raw(p, 1.0), 1.0)[0]).sum::<f64>()));
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let (state, snaps) = encoder_fixture(300, 4);
    let hidden = Matrix::zeros(state.n_nodes(), state.config.embedding_dim);
    let mut g = c.benchmark_group("encoder_300_nodes");
    g.sample_size(20);
    g.bench_function("loss_and_gradients", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| loss_total(&state, &snaps[0], &snaps[1], &hidden, &mut rng, true).unwrap().loss.total)
    });
    g.bench_function("rollout_4_snapshots", |b| b.iter(|| rollout(&state, black_box(&snaps), &hidden).len()));
    g.finish();
}

fn forest(c: &mut Criterion) {
    let (x, y) = regression_rows(2000, 36, 2);
    let cfg = ForestConfig { n_trees: 10, ..ForestConfig::default() };
    let model = fit_forest(&x, &y, &cfg).unwrap();
    let mut g = c.benchmark_group("forest_2000x36");
    g.sample_size(10);
    g.bench_function("fit_10_trees", |b| b.iter(|| fit_forest(&x, &y, &cfg).unwrap().trees.len()));
    g.bench_function("predict_2000_rows", |b| b.iter(|| model.predict_rows(&x).unwrap().len()));
    g.finish();
}

criterion_group!(benches, geometry, encoder, forest);
criterion_main!(benches);
