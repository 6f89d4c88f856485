//! Fixtures for the benchmarks.

use callout_core::harness::{generate_benchmark, BenchmarkOptions, Model};
use callout_core::Impression;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Benchmark workload with `networks` networks and the default grid size.
pub fn model(networks: usize, seed: u64) -> Model {
    let opts = BenchmarkOptions {
        networks,
        ..Default::default()
    };
    generate_benchmark(seed, &opts)
        .and_then(|s| s.resolve())
        .expect("benchmark scenario is valid")
}

/// `n` impressions drawn from `model`.
pub fn samples(model: &Model, n: usize, seed: u64) -> Vec<Impression> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| model.draw(&mut rng)).collect()
}
