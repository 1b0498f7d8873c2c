//! Seeded workloads shared by the benchmarks.

use parc_core::synth::{self, Case};
use parc_core::EmbeddingIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An `n x dim` index and `queries` unit-norm query vectors.
pub fn retrieval_workload(n: usize, dim: usize, queries: usize) -> (EmbeddingIndex, Vec<Vec<f32>>) {
    let mut r = rng(11);
    let index = synth::index(&mut r, n, dim);
    let qs = (0..queries)
        .map(|_| parc_core::embedding::normalize(&synth::vector(&mut r, dim)).expect("non-zero"))
        .collect();
    (index, qs)
}

pub fn bor_cases(k: usize, count: usize) -> Vec<Case> {
    let mut r = rng(12);
    (0..count).map(|_| synth::case(&mut r, k, true)).collect()
}

pub fn paired_samples(n: usize) -> (Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let mut r = rng(13);
    let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..100.0)).collect();
    let y = x
        .iter()
        .map(|v| v * 0.5 + r.random_range(-20.0..20.0))
        .collect();
    (x, y)
}
