//! Fixtures shared by the benchmarks.

use saltcal_core::noise::Wavevector;
use saltcal_core::solver::{initial_condition, Forcing};
use saltcal_core::{Grid, NoiseModel, ScalarField, SimParams};

/// Headline parameters on an `n`² grid with a short horizon.
pub fn headline_params(n: usize) -> SimParams {
    let grid = Grid::new(n).expect("valid grid size");
    let mut p = SimParams::inviscid(grid, 5e-6, 1e-3);
    p.forcing = Forcing::default();
    p.damping = 0.001;
    p.noise = NoiseModel::single(Wavevector::new(2, 4), 0.001);
    p
}

pub fn initial_state(n: usize) -> ScalarField {
    initial_condition(Grid::new(n).expect("valid grid size")).expect("resolved grid")
}
