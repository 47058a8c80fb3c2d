//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use qwem_core::trainers::PairBatch;
pub use qwem_core::{PlantedConfig, PlantedCorpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A reduced planted corpus that generates in well under a second.
pub fn small_planted() -> PlantedCorpus {
    let cfg = PlantedConfig { topic_sentences: 6000, analogy_sentences: 3000, ..PlantedConfig::default() };
    qwem_core::generate_planted(&cfg).expect("default planted layout is valid")
}

/// Symmetric matrix with entries in `[-1, 1]`.
pub fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

pub fn random_matrix(r: usize, c: usize, scale: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn random_batch(v: u32, n: usize, seed: u64) -> PairBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = PairBatch::default();
    for _ in 0..n {
        b.push(rng.random_range(0..v), rng.random_range(0..v), 1.0);
    }
    b
}
