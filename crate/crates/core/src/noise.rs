//! Parametric transport noise `ξ = ∇⊥ζ` and the driving Brownian path.
//!
//! The stream function is a finite sum of unit-amplitude Fourier cosines,
//! `ζ(x) = Σⱼ αⱼ cos(2π kⱼ·x)`. For a single mode this gives the closed form
//! `ξ = −2πα sin(2π k·x) k⊥` with `k⊥ = (k₂, −k₁)`.

use std::f64::consts::PI;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{perp_gradient, transport, Grid, ScalarField, VectorField};

/// Integer wavevector `k = (k₁, k₂)` on the unit torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Wavevector {
    pub k1: i32,
    pub k2: i32,
}

impl Wavevector {
    pub const fn new(k1: i32, k2: i32) -> Self {
        Self { k1, k2 }
    }

    /// `k⊥ = (k₂, −k₁)`.
    pub fn perp(&self) -> (f64, f64) {
        (self.k2 as f64, -(self.k1 as f64))
    }

    pub fn is_zero(&self) -> bool {
        self.k1 == 0 && self.k2 == 0
    }

    pub fn norm(&self) -> f64 {
        (self.k1 as f64).hypot(self.k2 as f64)
    }

    fn check(&self, grid: Grid) -> Result<()> {
        if self.is_zero() {
            return Err(Error::ZeroWavevector);
        }
        if !grid.resolves(self.k1 as i64, self.k2 as i64) {
            return Err(Error::UnresolvableWavevector {
                k1: self.k1,
                k2: self.k2,
                n: grid.n(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Wavevector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.k1, self.k2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseMode {
    pub k: Wavevector,
    pub alpha: f64,
}

/// Finite set of noise modes. An empty model is the deterministic equation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseModel {
    modes: Vec<NoiseMode>,
}

impl NoiseModel {
    pub fn new(modes: Vec<NoiseMode>) -> Self {
        Self { modes }
    }

    pub fn single(k: Wavevector, alpha: f64) -> Self {
        Self {
            modes: vec![NoiseMode { k, alpha }],
        }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn modes(&self) -> &[NoiseMode] {
        &self.modes
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            modes: self
                .modes
                .iter()
                .map(|m| NoiseMode {
                    k: m.k,
                    alpha: c * m.alpha,
                })
                .collect(),
        }
    }

    /// Same wavevectors, every amplitude replaced by `alpha`.
    pub fn with_amplitude(&self, alpha: f64) -> Self {
        Self {
            modes: self
                .modes
                .iter()
                .map(|m| NoiseMode { k: m.k, alpha })
                .collect(),
        }
    }

    /// Stream function `ζ = Σ αⱼ cos(2π kⱼ·x)`.
    pub fn stream(&self, grid: Grid) -> Result<ScalarField> {
        let mut zeta = ScalarField::zeros(grid);
        for m in &self.modes {
            zeta = &zeta + &basis_stream(m.k, grid)?.scaled(m.alpha);
        }
        Ok(zeta)
    }

    pub fn xi(&self, grid: Grid) -> Result<VectorField> {
        build_xi(self, grid)
    }
}

/// Unit-amplitude basis stream function `cos(2π k·x)`.
pub fn basis_stream(k: Wavevector, grid: Grid) -> Result<ScalarField> {
    k.check(grid)?;
    let (k1, k2) = (k.k1 as f64, k.k2 as f64);
    Ok(ScalarField::from_fn(grid, |x, y| {
        (2.0 * PI * (k1 * x + k2 * y)).cos()
    }))
}

/// Spatial profile `sin²(2π k·x)` of `|ξ|²` for a single mode, written as the
/// squared sine sum-angle combination used by the vorticity estimator.
pub fn basis_profile(k: Wavevector, grid: Grid) -> Result<ScalarField> {
    k.check(grid)?;
    let (k1, k2) = (k.k1 as f64, k.k2 as f64);
    Ok(ScalarField::from_fn(grid, |x, y| {
        let (a, b) = (2.0 * PI * k1 * x, 2.0 * PI * k2 * y);
        (a.cos() * b.sin() + a.sin() * b.cos()).powi(2)
    }))
}

/// `ξ = ∇⊥ζ`; the zero field for an empty model.
pub fn build_xi(model: &NoiseModel, grid: Grid) -> Result<VectorField> {
    Ok(perp_gradient(&model.stream(grid)?))
}

/// Dealiased `ξ·∇ω`.
pub fn xi_transport(xi: &VectorField, omega: &ScalarField) -> Result<ScalarField> {
    transport(xi, omega)
}

/// `ξ·∇(ξ·∇ω)`, dealiasing after each product.
pub fn double_transport(xi: &VectorField, omega: &ScalarField) -> Result<ScalarField> {
    transport(xi, &transport(xi, omega)?)
}

/// Brownian increments `ΔWᵢ ~ N(0, dt)` on a uniform partition.
///
/// Samples are drawn from ChaCha20 seeded with [`SeedableRng::seed_from_u64`]
/// and mapped through the ziggurat standard normal sampler of `rand_distr`,
/// then scaled by `√dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    dt: f64,
    seed: u64,
    increments: Vec<f64>,
}

impl BrownianPath {
    pub fn from_increments(dt: f64, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            dt,
            seed,
            increments,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// `Σ ΔWᵢ²`, which tends to the horizon `n·dt`.
    pub fn realized_qv(&self) -> f64 {
        self.increments.iter().map(|w| w * w).sum()
    }

    /// Path value `W_{t_n}`.
    pub fn terminal(&self) -> f64 {
        self.increments.iter().sum()
    }

    /// The reflected path `−W`.
    pub fn negated(&self) -> Self {
        Self {
            dt: self.dt,
            seed: self.seed,
            increments: self.increments.iter().map(|w| -w).collect(),
        }
    }
}

pub fn brownian_increments(n_steps: usize, dt: f64, seed: u64) -> Result<BrownianPath> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = dt.sqrt();
    let increments = (0..n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    Ok(BrownianPath {
        dt,
        seed,
        increments,
    })
}
