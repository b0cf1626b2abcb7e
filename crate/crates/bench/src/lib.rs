//! Benchmark fixtures shared by the criterion targets.

use cadsketch_core::synthgen::{sample_sketch, GeneratorConfig, RandomSource};
use cadsketch_core::{Sketch, TokenGrid};

/// `n` seeded generator draws.
pub fn sketches(n: usize, seed: u64) -> Vec<(TokenGrid, Sketch)> {
    let mut rng = RandomSource::new(seed);
    (0..n).map(|_| sample_sketch(&GeneratorConfig::default(), &mut rng).expect("generator config is valid")).collect()
}
