//! Deterministic inputs shared by the kernel benchmarks.

use invex_core::datagen::{default_clean_count, generate, GenSpec};
use invex_core::model::{Dataset, GroundTruthConfig};
use nalgebra::{DMatrix, DVector};

/// Dataset with the default clean count for `p` and half as many outliers.
pub fn dataset(p: usize, k: usize, seed: u64) -> Dataset {
    let r = default_clean_count(p);
    generate(&GenSpec::new(GroundTruthConfig::new(p, k), r, r.div_ceil(2), seed)).expect("fixture generation")
}

/// Symmetric `d x d` matrix with entries from a fixed linear congruential sequence.
pub fn symmetric(d: usize, seed: u64) -> DMatrix<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let g = DMatrix::from_fn(d, d, |_, _| next());
    (&g + g.transpose()) * 0.5
}

/// Vector of length `n` in `[-1, 1]` from the same sequence.
pub fn vector(n: usize, seed: u64) -> DVector<f64> {
    DVector::from_column_slice(symmetric(n, seed).column(0).as_slice())
}
