//! Periodic scalar and vector fields on the unit torus `[0,1)²`.
//!
//! Fields are stored in physical space; spectral operators transform on
//! demand (see [`crate::spectral`] for the normalisation). Sign conventions:
//! `∇⊥ = (∂₂, −∂₁)`, `curl u = ∂₁u₂ − ∂₂u₁`, `Δψ = −ω`, and the Biot–Savart
//! velocity is `u = ∇⊥ψ`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{dealias_cutoff, derivative_factor, wavenumber, Fft2d};

/// Square periodic grid with `n` cells per axis and spacing `h = 1/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of grid points, `n²`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Physical coordinates of grid point `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h(), j as f64 * self.h())
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Whether `(k1, k2)` is representable: `‖k‖∞ < n/2`.
    pub fn resolves(&self, k1: i64, k2: i64) -> bool {
        let half = (self.n / 2) as i64;
        k1.abs() < half && k2.abs() < half
    }

    /// Whether `(k1, k2)` survives the 2/3-rule truncation.
    pub fn in_dealiased_band(&self, k1: i64, k2: i64) -> bool {
        let cut = dealias_cutoff(self.n);
        k1.abs() <= cut && k2.abs() <= cut
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            })
        }
    }
}

/// Real-valued field sampled on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.n(),
                grid.n(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field from rows indexed by the `x` grid index.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Dimension(format!(
                "non-square input: row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        let grid = Grid::new(n).map_err(|_| {
            Error::Dimension(format!("grid size {n} must be even and at least 8"))
        })?;
        Self::new(grid, rows.concat())
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f(x, y)` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            for j in 0..n {
                let (x, y) = grid.point(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Cyclic shift by `(di, dj)` grid cells.
    pub fn translated(&self, di: usize, dj: usize) -> Self {
        let n = self.grid.n();
        let mut values = vec![0.0; self.grid.len()];
        for i in 0..n {
            for j in 0..n {
                values[((i + di) % n) * n + (j + dj) % n] = self.values[i * n + j];
            }
        }
        Self {
            grid: self.grid,
            values,
        }
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch in field addition");
        self.zip_with(rhs, |a, b| a + b).expect("grids checked")
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch in field subtraction");
        self.zip_with(rhs, |a, b| a - b).expect("grids checked")
    }
}

impl Mul<&ScalarField> for f64 {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        rhs.scaled(self)
    }
}

/// Two-component field `(u₁, u₂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub u1: ScalarField,
    pub u2: ScalarField,
}

impl VectorField {
    pub fn new(u1: ScalarField, u2: ScalarField) -> Result<Self> {
        u1.grid.check_same(&u2.grid)?;
        Ok(Self { u1, u2 })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            u1: ScalarField::zeros(grid),
            u2: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.u1.grid
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            u1: self.u1.scaled(c),
            u2: self.u2.scaled(c),
        }
    }

    pub fn add(&self, other: &VectorField) -> Result<Self> {
        Ok(Self {
            u1: self.u1.zip_with(&other.u1, |a, b| a + b)?,
            u2: self.u2.zip_with(&other.u2, |a, b| a + b)?,
        })
    }

    pub fn sub(&self, other: &VectorField) -> Result<Self> {
        Ok(Self {
            u1: self.u1.zip_with(&other.u1, |a, b| a - b)?,
            u2: self.u2.zip_with(&other.u2, |a, b| a - b)?,
        })
    }

    /// Pointwise magnitude maximum.
    pub fn max_abs(&self) -> f64 {
        self.u1
            .values
            .iter()
            .zip(&self.u2.values)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// L² norm `(∫|u|²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (l2_norm(&self.u1).powi(2) + l2_norm(&self.u2).powi(2)).sqrt()
    }
}

/// Spectral coefficients of a field (normalised as in [`crate::spectral`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient for the signed wavevector `(k1, k2)`.
    pub fn get(&self, k1: i64, k2: i64) -> Complex64 {
        let n = self.grid.n();
        let a = crate::spectral::storage_index(k1, n);
        let b = crate::spectral::storage_index(k2, n);
        self.coeffs[a * n + b]
    }

    /// Applies `f(k1, k2, ĉ)` to every coefficient.
    pub fn map(&self, f: impl Fn(i64, i64, Complex64) -> Complex64) -> Self {
        let n = self.grid.n();
        let mut coeffs = self.coeffs.clone();
        for a in 0..n {
            let k1 = wavenumber(a, n);
            for b in 0..n {
                let k2 = wavenumber(b, n);
                coeffs[a * n + b] = f(k1, k2, coeffs[a * n + b]);
            }
        }
        Self {
            grid: self.grid,
            coeffs,
        }
    }

    pub fn to_physical(&self) -> ScalarField {
        to_physical(self)
    }
}

pub fn to_spectral(f: &ScalarField) -> Spectrum {
    let fft = Fft2d::shared(f.grid.n());
    let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut scratch = fft.make_scratch();
    fft.forward(&mut buf, &mut scratch);
    Spectrum {
        grid: f.grid,
        coeffs: buf,
    }
}

/// Inverse transform, keeping the real part.
pub fn to_physical(s: &Spectrum) -> ScalarField {
    let fft = Fft2d::shared(s.grid.n());
    let mut buf = s.coeffs.clone();
    let mut scratch = fft.make_scratch();
    fft.inverse(&mut buf, &mut scratch);
    ScalarField {
        grid: s.grid,
        values: buf.iter().map(|c| c.re).collect(),
    }
}

/// Multiplies every coefficient by `m(a, b)` (storage indices) and returns to
/// physical space.
fn spectral_multiply(f: &ScalarField, m: impl Fn(usize, usize) -> Complex64) -> ScalarField {
    let n = f.grid.n();
    let mut s = to_spectral(f);
    for a in 0..n {
        for b in 0..n {
            s.coeffs[a * n + b] *= m(a, b);
        }
    }
    to_physical(&s)
}

fn d1(f: &ScalarField) -> ScalarField {
    let n = f.grid.n();
    spectral_multiply(f, |a, _| Complex64::new(0.0, derivative_factor(a, n)))
}

fn d2(f: &ScalarField) -> ScalarField {
    let n = f.grid.n();
    spectral_multiply(f, |_, b| Complex64::new(0.0, derivative_factor(b, n)))
}

/// Spectral gradient `(∂₁f, ∂₂f)`.
pub fn gradient(f: &ScalarField) -> VectorField {
    VectorField {
        u1: d1(f),
        u2: d2(f),
    }
}

/// `a ∂₁f + b ∂₂f` in a single spectral pass.
pub fn directional_derivative(f: &ScalarField, (a, b): (f64, f64)) -> ScalarField {
    let n = f.grid.n();
    spectral_multiply(f, |p, q| {
        Complex64::new(0.0, a * derivative_factor(p, n) + b * derivative_factor(q, n))
    })
}

/// `∇⊥f = (∂₂f, −∂₁f)`; divergence-free by construction.
pub fn perp_gradient(f: &ScalarField) -> VectorField {
    VectorField {
        u1: d2(f),
        u2: d1(f).scaled(-1.0),
    }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    &d1(&v.u1) + &d2(&v.u2)
}

/// Scalar vorticity `∂₁u₂ − ∂₂u₁`.
pub fn curl(v: &VectorField) -> ScalarField {
    &d1(&v.u2) - &d2(&v.u1)
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let n = f.grid.n();
    spectral_multiply(f, |a, b| {
        let (p, q) = (derivative_factor(a, n), derivative_factor(b, n));
        Complex64::new(-(p * p + q * q), 0.0)
    })
}

/// Solves `Δψ = −(f − mean f)` with `mean ψ = 0`.
pub fn invert_laplacian(f: &ScalarField) -> ScalarField {
    let n = f.grid.n();
    spectral_multiply(f, |a, b| {
        let (k1, k2) = (wavenumber(a, n) as f64, wavenumber(b, n) as f64);
        let k2sum = k1 * k1 + k2 * k2;
        if k2sum == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0 / (4.0 * PI * PI * k2sum), 0.0)
        }
    })
}

/// Velocity `u = ∇⊥Δ⁻¹(−ω)` recovered from vorticity.
pub fn biot_savart(omega: &ScalarField) -> VectorField {
    perp_gradient(&invert_laplacian(omega))
}

/// Zeroes all modes outside the 2/3-rule band.
pub fn dealias(f: &ScalarField) -> ScalarField {
    let n = f.grid.n();
    let grid = f.grid;
    spectral_multiply(f, |a, b| {
        if grid.in_dealiased_band(wavenumber(a, n), wavenumber(b, n)) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Dealiased transport `P[v·∇f]`.
pub fn transport(v: &VectorField, f: &ScalarField) -> Result<ScalarField> {
    v.grid().check_same(&f.grid)?;
    let g = gradient(f);
    let product: Vec<f64> = (0..f.grid.len())
        .map(|i| v.u1.values[i] * g.u1.values[i] + v.u2.values[i] * g.u2.values[i])
        .collect();
    Ok(dealias(&ScalarField {
        grid: f.grid,
        values: product,
    }))
}

/// Nonlinear advection term `u·∇ω`, dealiased.
pub fn advection(u: &VectorField, omega: &ScalarField) -> Result<ScalarField> {
    transport(u, omega)
}

/// `e = ½ ∫ |u|²` with `u` the Biot–Savart velocity of `omega`.
pub fn kinetic_energy(omega: &ScalarField) -> f64 {
    let u = biot_savart(omega);
    let h2 = omega.grid.h().powi(2);
    0.5 * h2
        * u.u1
            .values
            .iter()
            .zip(&u.u2.values)
            .map(|(a, b)| a * a + b * b)
            .sum::<f64>()
}

pub fn mean(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() / f.values.len() as f64
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    (f.grid.h().powi(2) * f.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `⟨f, g⟩ = ∫ f g`, evaluated with the grid quadrature.
pub fn inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    Ok(f.grid.h().powi(2) * f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>())
}

pub fn inner_vector(u: &VectorField, v: &VectorField) -> Result<f64> {
    Ok(inner(&u.u1, &v.u1)? + inner(&u.u2, &v.u2)?)
}

/// `H^{k,2}` norm, `(Σ (1 + 4π²|k|²)^k |ĉ(k)|²)^{1/2}`.
pub fn sobolev_norm(f: &ScalarField, k: i32) -> Result<f64> {
    if k < 0 {
        return Err(Error::NegativeSobolevOrder(k));
    }
    let s = to_spectral(f);
    let n = f.grid.n();
    let mut total = 0.0;
    for a in 0..n {
        let k1 = wavenumber(a, n) as f64;
        for b in 0..n {
            let k2 = wavenumber(b, n) as f64;
            let weight = (1.0 + 4.0 * PI * PI * (k1 * k1 + k2 * k2)).powi(k);
            total += weight * s.coeffs[a * n + b].norm_sqr();
        }
    }
    Ok(total.sqrt())
}
