//! Inputs shared by the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdlab_core::ambiguity::Matrix;
use crowdlab_core::crowdsim::{simulate, SimPlan};
use crowdlab_core::labeler::Potentials;
use crowdlab_core::synthetic::{synthetic_pos_corpus, SyntheticConfig};
use crowdlab_core::CrowdAnnotations;

/// Crowd labels over a synthetic corpus of `n_sequences`, ca3 grouping.
pub fn crowd(n_sequences: usize, seed: u64) -> CrowdAnnotations {
    let (corpus, labels) = synthetic_pos_corpus(&SyntheticConfig { n_sequences, seed, ..Default::default() })
        .expect("valid synthetic config");
    simulate(&corpus, labels.len(), &SimPlan::three_band([3, 4, 8], seed))
        .expect("simulation of a valid corpus")
        .annotations
}

pub fn random_potentials(len: usize, n_labels: usize, seed: u64) -> Potentials {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Potentials {
        len,
        n_labels,
        unary: (0..len * n_labels).map(|_| rng.random_range(-2.0..2.0)).collect(),
        trans: (0..n_labels * n_labels).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

/// Per-position cost weights: 0 on `gold`, otherwise in `[0.1, 1)`.
pub fn random_weights(len: usize, n_labels: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_labels)).collect();
    gold.iter()
        .flat_map(|&t| (0..n_labels).map(move |y| (t, y)).collect::<Vec<_>>())
        .map(|(t, y)| if t == y { 0.0 } else { rng.random_range(0.1..1.0) })
        .collect()
}

pub fn random_nonnegative(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.0..8.0)).collect()).expect("shape matches data")
}
