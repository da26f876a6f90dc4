//! Fixtures shared by the criterion benchmarks under `benches/`.

use hermit_core::forest::FeatureMatrix;
use hermit_core::{generate, EdgeNormalizer, ModelConfig, ModelState, PreparedSnapshot, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points with norms uniform in `[0, 0.95)`, as flat coordinate vectors.
pub fn ball_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let r = rng.random_range(0.0..0.95);
            v.into_iter().map(|x| x / n * r).collect()
        })
        .collect()
}

/// A freshly initialized encoder and the prepared snapshots of a synthetic graph.
pub fn encoder_fixture(n_nodes: usize, n_snapshots: usize) -> (ModelState, Vec<PreparedSnapshot>) {
    let seq = generate(&SynthConfig { n_nodes, n_snapshots, ..SynthConfig::default() }).expect("valid synth config");
    let norm = EdgeNormalizer::fit(&seq).expect("non-degenerate RTTs");
    let snaps = PreparedSnapshot::prepare_all(&seq, &norm).expect("prepared");
    (ModelState::new(ModelConfig::default(), seq.num_nodes).expect("default config"), snaps)
}

/// Noisy nonlinear regression rows.
pub fn regression_rows(n: usize, d: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let y = rows.iter().map(|r| r.iter().enumerate().map(|(i, x)| (x * (i + 1) as f64).sin()).sum()).collect();
    (FeatureMatrix::from_rows(&rows).expect("rectangular rows"), y)
}
