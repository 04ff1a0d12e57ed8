//! Shared helpers for unit tests.

use std::f64::consts::PI;

use crate::field::{Grid, ScalarField};
use crate::spectral::dealias_cutoff;

/// Deterministic pseudo-random field whose modes all lie in the dealiased band.
pub(crate) fn band_limited(grid: Grid, seed: u64) -> ScalarField {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let cut = dealias_cutoff(grid.n()) as f64;
    let modes: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            let k1 = (next() * 2.0 * cut).round();
            let k2 = (next() * 2.0 * cut).round();
            (k1, k2, next(), next() * 6.0)
        })
        .collect();
    ScalarField::from_fn(grid, |x, y| {
        modes
            .iter()
            .map(|&(k1, k2, a, ph)| a * (2.0 * PI * (k1 * x + k2 * y) + ph).cos())
            .sum()
    })
}
