//! Pathwise estimation of the noise amplitude from high-frequency vorticity
//! snapshots.
//!
//! For a single noise mode `ζ = α cos(2π k·x)` the realized quadratic
//! variation of the vorticity satisfies
//!
//! ```text
//! Σᵢ (ω_{tᵢ}(x) − ω_{tᵢ₋₁}(x))² ≈ 4π²α² B(t,k,x) sin²(2π k·x),
//! B(t,k,x) = ∫₀ᵗ (k⊥·∇ω_s(x))² ds,
//! ```
//!
//! and both sides are integrated over the torus before dividing. Time
//! integrals use the trapezoidal rule on the same samples as the quadratic
//! variation sum.
//!
//! Every estimator is available as a streaming accumulator (a
//! [`SnapshotSink`]) so that long runs never need to be held in memory; the
//! trajectory-level functions replay a [`Trajectory`] through the same
//! accumulators.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::field::{
    biot_savart, directional_derivative, inner, inner_vector, kinetic_energy, perp_gradient,
    transport, Grid, ScalarField, VectorField,
};
use crate::noise::{basis_profile, basis_stream, Wavevector};
use crate::solver::{SnapshotSink, Trajectory};

/// Eigenvalues below this are treated as carrying no information.
pub const EIGEN_FLOOR: f64 = 1e-14;

/// Relative size of `∫B·e′` against `∫B` below which the estimator refuses
/// to divide.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Realized quadratic variation per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct QvField {
    pub field: ScalarField,
    /// Horizon `t_N − t_0` covered by the sum.
    pub horizon: f64,
    /// Number of increments `N`.
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub alpha_hat: f64,
    /// `|α − α̂|/α` when the generating amplitude is known.
    pub relative_error: Option<f64>,
    /// Quadratic form relating `α̃²` to the integrated quadratic variation.
    pub gram: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
    pub modes: Vec<Wavevector>,
    pub horizon: f64,
    pub samples: usize,
    /// `∫ [ω]_{t,N} dx`.
    pub qv_integral: f64,
    /// `∫ B(t,k,x) e′_k(x) dx`.
    pub b_integral: f64,
}

/// `|α − α̂| / α`.
pub fn relative_error(alpha_hat: f64, alpha_true: f64) -> Result<f64> {
    if alpha_true == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((alpha_true - alpha_hat).abs() / alpha_true.abs())
}

fn integrate(grid: Grid, values: &[f64]) -> f64 {
    grid.h().powi(2) * values.iter().sum::<f64>()
}

/// Streaming sum of squared snapshot increments.
#[derive(Clone, Debug)]
pub struct QvAccumulator {
    grid: Grid,
    sum: Vec<f64>,
    prev: Option<Vec<f64>>,
    t0: f64,
    t_last: f64,
    samples: usize,
}

impl QvAccumulator {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            sum: vec![0.0; grid.len()],
            prev: None,
            t0: 0.0,
            t_last: 0.0,
            samples: 0,
        }
    }

    fn push_values(&mut self, t: f64, omega: &[f64]) {
        match &mut self.prev {
            None => {
                self.t0 = t;
                self.prev = Some(omega.to_vec());
            }
            Some(prev) => {
                for ((s, p), &w) in self.sum.iter_mut().zip(prev.iter_mut()).zip(omega) {
                    let d = w - *p;
                    *s += d * d;
                    *p = w;
                }
                self.samples += 1;
            }
        }
        self.t_last = t;
    }

    /// Number of snapshots consumed.
    pub fn snapshots(&self) -> usize {
        if self.prev.is_some() {
            self.samples + 1
        } else {
            0
        }
    }

    pub fn finish(&self) -> Result<QvField> {
        if self.samples == 0 {
            return Err(Error::TooFewSnapshots(self.snapshots()));
        }
        Ok(QvField {
            field: ScalarField::new(self.grid, self.sum.clone())?,
            horizon: self.t_last - self.t0,
            samples: self.samples,
        })
    }
}

impl SnapshotSink for QvAccumulator {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        check_grid(self.grid, omega)?;
        self.push_values(t, omega.values());
        Ok(())
    }
}

fn check_grid(grid: Grid, omega: &ScalarField) -> Result<()> {
    if omega.grid() != grid {
        return Err(Error::GridMismatch {
            left: grid.n(),
            right: omega.grid().n(),
        });
    }
    Ok(())
}

/// `k⊥·∇ω` for the wavevector `k`.
pub fn kperp_derivative(omega: &ScalarField, k: Wavevector) -> ScalarField {
    directional_derivative(omega, k.perp())
}

/// Streaming single-mode estimator: quadratic variation plus the
/// trapezoidal `B(t,k,x)` integral on the same samples.
#[derive(Clone, Debug)]
pub struct AlphaEstimator {
    k: Wavevector,
    qv: QvAccumulator,
    b: Vec<f64>,
    prev_integrand: Option<(f64, Vec<f64>)>,
    profile: ScalarField,
}

impl AlphaEstimator {
    pub fn new(grid: Grid, k: Wavevector) -> Result<Self> {
        Ok(Self {
            k,
            qv: QvAccumulator::new(grid),
            b: vec![0.0; grid.len()],
            prev_integrand: None,
            profile: basis_profile(k, grid)?,
        })
    }

    pub fn wavevector(&self) -> Wavevector {
        self.k
    }

    /// Adds a snapshot whose `k⊥·∇ω` has already been computed.
    pub fn push_with_derivative(
        &mut self,
        t: f64,
        omega: &ScalarField,
        kperp_grad: &ScalarField,
    ) -> Result<()> {
        check_grid(self.qv.grid, omega)?;
        check_grid(self.qv.grid, kperp_grad)?;
        if let Some(last) = self.prev_integrand.as_ref().map(|p| p.0) {
            if !(t > last) {
                return Err(Error::Trajectory(format!(
                    "times must increase strictly: {t} after {last}"
                )));
            }
        }
        self.qv.push_values(t, omega.values());
        let integrand: Vec<f64> = kperp_grad.values().iter().map(|g| g * g).collect();
        if let Some((t_prev, prev)) = &self.prev_integrand {
            let half = 0.5 * (t - t_prev);
            for ((b, p), c) in self.b.iter_mut().zip(prev).zip(&integrand) {
                *b += half * (p + c);
            }
        }
        self.prev_integrand = Some((t, integrand));
        Ok(())
    }

    pub fn qv_field(&self) -> Result<QvField> {
        self.qv.finish()
    }

    /// `B(t,k,x)`.
    pub fn b_field(&self) -> Result<ScalarField> {
        if self.qv.samples == 0 {
            return Err(Error::TooFewSnapshots(self.qv.snapshots()));
        }
        ScalarField::new(self.qv.grid, self.b.clone())
    }

    /// `B(t,k,x) e′_k(x)`, the right-hand profile of the estimator.
    pub fn weighted_b_field(&self) -> Result<ScalarField> {
        self.b_field()?.zip_with(&self.profile, |b, e| b * e)
    }

    /// Pointwise `[ω](x) / (4π² B e′)`; grid points where the denominator is
    /// negligible are NaN. Diagnostic only.
    pub fn pointwise_alpha_sq(&self) -> Result<ScalarField> {
        let qv = self.qv_field()?.field;
        let den = self.weighted_b_field()?;
        let scale = den.max_abs();
        qv.zip_with(&den, |q, d| {
            if d > DENOMINATOR_FLOOR * scale && d > 0.0 {
                q / (4.0 * PI * PI * d)
            } else {
                f64::NAN
            }
        })
    }

    /// `α̂² = ∫[ω] / (4π² ∫B e′)`.
    pub fn estimate(&self, alpha_true: Option<f64>) -> Result<CalibrationResult> {
        let qv = self.qv_field()?;
        let grid = self.qv.grid;
        let qv_integral = integrate(grid, qv.field.values());
        let b_total = integrate(grid, &self.b);
        let b_integral = inner(&self.b_field()?, &self.profile)?;
        if !(b_integral > DENOMINATOR_FLOOR * b_total) || !b_integral.is_finite() {
            return Err(Error::DegenerateDenominator(b_integral));
        }
        let lambda = 4.0 * PI * PI * b_integral;
        let alpha_sq = qv_integral / lambda;
        let alpha_hat = alpha_sq.max(0.0).sqrt();
        let relative_error = alpha_true.map(|a| relative_error(alpha_hat, a)).transpose()?;
        Ok(CalibrationResult {
            alpha_hat,
            relative_error,
            gram: DMatrix::from_element(1, 1, lambda),
            eigenvalues: vec![lambda],
            alpha_tilde: vec![alpha_hat],
            modes: vec![self.k],
            horizon: qv.horizon,
            samples: qv.samples,
            qv_integral,
            b_integral,
        })
    }
}

impl SnapshotSink for AlphaEstimator {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        let d = kperp_derivative(omega, self.k);
        self.push_with_derivative(t, omega, &d)
    }
}

/// Pearson correlation of two fields over the grid points.
pub fn correlation(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    check_grid(a.grid(), b)?;
    let n = a.values().len() as f64;
    let ma = a.values().iter().sum::<f64>() / n;
    let mb = b.values().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Pointwise quadratic variation of the vorticity.
pub fn vorticity_qv(traj: &Trajectory) -> Result<QvField> {
    let mut acc = QvAccumulator::new(traj.grid());
    traj.replay(&mut acc)?;
    acc.finish()
}

/// `B(t,k,x) = ∫₀ᵗ (k⊥·∇ω_s)² ds` by the trapezoidal rule.
pub fn b_field(traj: &Trajectory, k: Wavevector) -> Result<ScalarField> {
    let mut est = AlphaEstimator::new(traj.grid(), k)?;
    traj.replay(&mut est)?;
    est.b_field()
}

/// Single-mode amplitude estimate from every snapshot of `traj`.
pub fn estimate_alpha(
    traj: &Trajectory,
    k: Wavevector,
    alpha_true: Option<f64>,
) -> Result<CalibrationResult> {
    let mut est = AlphaEstimator::new(traj.grid(), k)?;
    traj.replay(&mut est)?;
    est.estimate(alpha_true)
}

/// Kinetic energy quadratic variation `Σ (e_{tᵢ} − e_{tᵢ₋₁})²`.
#[derive(Clone, Debug, Default)]
pub struct EnergyQvAccumulator {
    prev: Option<f64>,
    sum: f64,
    samples: usize,
}

impl EnergyQvAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_energy(&mut self, e: f64) {
        if let Some(p) = self.prev {
            self.sum += (e - p) * (e - p);
            self.samples += 1;
        }
        self.prev = Some(e);
    }

    pub fn finish(&self) -> Result<f64> {
        if self.samples == 0 {
            return Err(Error::TooFewSnapshots(usize::from(self.prev.is_some())));
        }
        Ok(self.sum)
    }
}

impl SnapshotSink for EnergyQvAccumulator {
    fn observe(&mut self, _t: f64, omega: &ScalarField) -> Result<()> {
        self.push_energy(kinetic_energy(omega));
        Ok(())
    }
}

pub fn energy_qv(traj: &Trajectory) -> Result<f64> {
    let mut acc = EnergyQvAccumulator::new();
    traj.replay(&mut acc)?;
    acc.finish()
}

/// Evenly strided subsample of `total` increments into `n` increments:
/// snapshot `j` of the subsample is `round(j·total/n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleSchedule {
    total: usize,
    n: usize,
}

impl SampleSchedule {
    pub fn new(total: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if n > total {
            return Err(Error::SampleCount {
                requested: n,
                available: total,
            });
        }
        Ok(Self { total, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Snapshot index of subsample point `j ∈ 0..=n`.
    pub fn index(&self, j: usize) -> usize {
        let (j, total, n) = (j as u128, self.total as u128, self.n as u128);
        ((j * total + n / 2) / n) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub alpha_hat: f64,
    pub relative_error: Option<f64>,
    pub result: CalibrationResult,
}

struct StudyEntry {
    schedule: SampleSchedule,
    next: usize,
    estimator: AlphaEstimator,
}

/// Streaming error-versus-N study: one single-mode estimator per requested
/// sample count, each fed its own strided subsequence of the snapshots.
pub struct ConvergenceStudy {
    k: Wavevector,
    entries: Vec<StudyEntry>,
    index: usize,
    alpha_true: Option<f64>,
    /// Last full-resolution estimator, kept for the field dumps.
    full: Option<usize>,
}

impl ConvergenceStudy {
    /// `total` is the number of increments in the stream (snapshots − 1).
    pub fn new(
        grid: Grid,
        k: Wavevector,
        total: usize,
        n_list: &[usize],
        alpha_true: Option<f64>,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(n_list.len());
        for &n in n_list {
            entries.push(StudyEntry {
                schedule: SampleSchedule::new(total, n)?,
                next: 0,
                estimator: AlphaEstimator::new(grid, k)?,
            });
        }
        let full = entries
            .iter()
            .enumerate()
            .max_by_key(|(_, e)| e.schedule.n())
            .map(|(i, _)| i);
        Ok(Self {
            k,
            entries,
            index: 0,
            alpha_true,
            full,
        })
    }

    /// Estimator with the largest `N`, for field dumps.
    pub fn densest(&self) -> Option<&AlphaEstimator> {
        self.full.map(|i| &self.entries[i].estimator)
    }

    pub fn finish(&self) -> Result<Vec<ConvergenceRow>> {
        self.entries
            .iter()
            .map(|e| {
                if e.next != e.schedule.n() + 1 {
                    return Err(Error::Trajectory(format!(
                        "stream ended after {} snapshots, N = {} needs index {}",
                        self.index,
                        e.schedule.n(),
                        e.schedule.index(e.schedule.n())
                    )));
                }
                let result = e.estimator.estimate(self.alpha_true)?;
                Ok(ConvergenceRow {
                    n: e.schedule.n(),
                    alpha_hat: result.alpha_hat,
                    relative_error: result.relative_error,
                    result,
                })
            })
            .collect()
    }
}

impl SnapshotSink for ConvergenceStudy {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        let index = self.index;
        let wanted = |e: &StudyEntry| e.next <= e.schedule.n() && e.schedule.index(e.next) == index;
        if self.entries.iter().any(wanted) {
            let d = kperp_derivative(omega, self.k);
            for e in self.entries.iter_mut().filter(|e| wanted(e)) {
                e.estimator.push_with_derivative(t, omega, &d)?;
                e.next += 1;
            }
        }
        self.index += 1;
        Ok(())
    }
}

/// `err_N` (or `α̂_N` when `alpha_true` is `None`) for every `N` in `n_list`.
pub fn convergence_study(
    traj: &Trajectory,
    k: Wavevector,
    n_list: &[usize],
    alpha_true: Option<f64>,
) -> Result<Vec<ConvergenceRow>> {
    if traj.len() < 2 {
        return Err(Error::TooFewSnapshots(traj.len()));
    }
    let mut study = ConvergenceStudy::new(traj.grid(), k, traj.len() - 1, n_list, alpha_true)?;
    traj.replay(&mut study)?;
    study.finish()
}

fn basis_fields(grid: Grid, basis: &[Wavevector]) -> Result<Vec<VectorField>> {
    if basis.is_empty() {
        return Err(Error::InvalidParameter("basis must contain at least one mode".into()));
    }
    basis
        .iter()
        .map(|&k| Ok(perp_gradient(&basis_stream(k, grid)?)))
        .collect()
}

/// Streaming assembly of the energy-route quadratic form
/// `A_ij = ∫₀ᵗ ⟨u, K⋆(∇⊥eⱼ·∇ω)⟩ ⟨u, K⋆(∇⊥eᵢ·∇ω)⟩ ds`.
#[derive(Clone, Debug)]
pub struct GramAccumulator {
    grid: Grid,
    basis: Vec<Wavevector>,
    fields: Vec<VectorField>,
    prev: Option<(f64, Vec<f64>)>,
    gram: DMatrix<f64>,
    snapshots: usize,
}

impl GramAccumulator {
    pub fn new(grid: Grid, basis: &[Wavevector]) -> Result<Self> {
        let fields = basis_fields(grid, basis)?;
        let m = basis.len();
        Ok(Self {
            grid,
            basis: basis.to_vec(),
            fields,
            prev: None,
            gram: DMatrix::zeros(m, m),
            snapshots: 0,
        })
    }

    pub fn basis(&self) -> &[Wavevector] {
        &self.basis
    }

    /// `⟨u, K⋆(∇⊥eⱼ·∇ω)⟩` for every basis element.
    pub fn responses(&self, omega: &ScalarField) -> Result<Vec<f64>> {
        let u = biot_savart(omega);
        self.fields
            .iter()
            .map(|f| inner_vector(&u, &biot_savart(&transport(f, omega)?)))
            .collect()
    }

    pub fn finish(&self) -> Result<DMatrix<f64>> {
        if self.snapshots < 2 {
            return Err(Error::TooFewSnapshots(self.snapshots));
        }
        Ok(self.gram.clone())
    }
}

impl SnapshotSink for GramAccumulator {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        check_grid(self.grid, omega)?;
        let p = self.responses(omega)?;
        if let Some((t_prev, q)) = &self.prev {
            let half = 0.5 * (t - t_prev);
            let m = p.len();
            for i in 0..m {
                for j in i..m {
                    let v = half * (q[i] * q[j] + p[i] * p[j]);
                    self.gram[(i, j)] += v;
                    if i != j {
                        self.gram[(j, i)] += v;
                    }
                }
            }
        }
        self.prev = Some((t, p));
        self.snapshots += 1;
        Ok(())
    }
}

pub fn assemble_gram(traj: &Trajectory, basis: &[Wavevector]) -> Result<DMatrix<f64>> {
    let mut acc = GramAccumulator::new(traj.grid(), basis)?;
    traj.replay(&mut acc)?;
    acc.finish()
}

/// Eigen-decomposition of a Gram matrix together with the scalar
/// constraint `qv = Σ α̃ⱼ² λⱼ + ε′`.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagonalization {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub qv_target: f64,
    /// Indices of eigenvalues below [`EIGEN_FLOOR`].
    pub unidentifiable: Vec<usize>,
    /// `qv / λ₁` for a single mode. With more modes one equation cannot fix
    /// all coefficients and this is `None`.
    pub alpha_tilde_sq: Option<f64>,
}

impl Diagonalization {
    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone()));
        &self.eigenvectors * lambda * self.eigenvectors.transpose()
    }

    /// Truncation residual `ε′ = qv − Σ α̃ⱼ² λⱼ`.
    pub fn residual(&self, alpha_tilde: &[f64]) -> f64 {
        self.qv_target
            - alpha_tilde
                .iter()
                .zip(&self.eigenvalues)
                .map(|(a, l)| a * a * l)
                .sum::<f64>()
    }

    /// Maps rotated coefficients back to the original basis, `α = U α̃`.
    pub fn to_original(&self, alpha_tilde: &[f64]) -> Vec<f64> {
        (&self.eigenvectors * DVector::from_column_slice(alpha_tilde))
            .iter()
            .copied()
            .collect()
    }
}

pub fn diagonalize_solve(a: &DMatrix<f64>, qv_target: f64) -> Result<Diagonalization> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "Gram matrix must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidParameter("Gram matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    if eigenvalues.iter().all(|&l| l < EIGEN_FLOOR) {
        return Err(Error::Unidentifiable { floor: EIGEN_FLOOR });
    }
    let unidentifiable = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l < EIGEN_FLOOR)
        .map(|(i, _)| i)
        .collect();
    let alpha_tilde_sq = (a.nrows() == 1).then(|| qv_target / eigenvalues[0]);
    Ok(Diagonalization {
        eigenvalues,
        eigenvectors,
        qv_target,
        unidentifiable,
        alpha_tilde_sq,
    })
}

/// Multi-mode fit of the spatially resolved vorticity quadratic variation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeEstimate {
    pub modes: Vec<Wavevector>,
    /// Least-squares products `βᵢⱼ ≈ αᵢαⱼ`.
    pub products: DMatrix<f64>,
    /// Rank-one factor of `β`; the overall sign is not identifiable and is
    /// fixed so the largest component is positive.
    pub alpha: Vec<f64>,
    /// `∫ Gᵢⱼ(x) dx`, the spatially integrated quadratic form.
    pub gram: DMatrix<f64>,
    /// Relative L² misfit of the fitted quadratic variation field.
    pub relative_residual: f64,
}

/// Streaming accumulation of `Gᵢⱼ(x) = ∫₀ᵗ (∇⊥eᵢ·∇ω)(∇⊥eⱼ·∇ω) ds` and the
/// vorticity quadratic variation.
pub struct ModeFitAccumulator {
    grid: Grid,
    basis: Vec<Wavevector>,
    fields: Vec<VectorField>,
    qv: QvAccumulator,
    /// Upper-triangular pairs in row-major order.
    products: Vec<Vec<f64>>,
    prev: Option<(f64, Vec<Vec<f64>>)>,
}

impl ModeFitAccumulator {
    pub fn new(grid: Grid, basis: &[Wavevector]) -> Result<Self> {
        let fields = basis_fields(grid, basis)?;
        let m = basis.len();
        Ok(Self {
            grid,
            basis: basis.to_vec(),
            fields,
            qv: QvAccumulator::new(grid),
            products: vec![vec![0.0; grid.len()]; m * (m + 1) / 2],
            prev: None,
        })
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let m = self.basis.len();
        (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect()
    }

    pub fn finish(&self) -> Result<ModeEstimate> {
        let qv = self.qv.finish()?;
        let pairs = self.pairs();
        let rows = self.grid.len();
        let design = DMatrix::from_fn(rows, pairs.len(), |r, c| {
            let (i, j) = pairs[c];
            let weight = if i == j { 1.0 } else { 2.0 };
            weight * self.products[c][r]
        });
        let target = DVector::from_column_slice(qv.field.values());
        let svd = design.clone().svd(true, true);
        let beta = svd
            .solve(&target, EIGEN_FLOOR)
            .map_err(|e| Error::InvalidParameter(format!("least squares failed: {e}")))?;
        let residual = (&design * &beta - &target).norm() / target.norm().max(f64::MIN_POSITIVE);

        let m = self.basis.len();
        let mut products = DMatrix::zeros(m, m);
        let mut gram = DMatrix::zeros(m, m);
        for (c, &(i, j)) in pairs.iter().enumerate() {
            products[(i, j)] = beta[c];
            products[(j, i)] = beta[c];
            let g = integrate(self.grid, &self.products[c]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
        let eig = SymmetricEigen::new(products.clone());
        let top = (0..m)
            .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
            .expect("non-empty basis");
        let lambda = eig.eigenvalues[top].max(0.0);
        let v = eig.eigenvectors.column(top);
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        let alpha = v.iter().map(|x| sign * lambda.sqrt() * x).collect();
        Ok(ModeEstimate {
            modes: self.basis.clone(),
            products,
            alpha,
            gram,
            relative_residual: residual,
        })
    }
}

impl SnapshotSink for ModeFitAccumulator {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        check_grid(self.grid, omega)?;
        self.qv.push_values(t, omega.values());
        let grad = crate::field::gradient(omega);
        let d: Vec<Vec<f64>> = self
            .fields
            .iter()
            .map(|f| {
                (0..self.grid.len())
                    .map(|x| {
                        f.u1.values()[x] * grad.u1.values()[x]
                            + f.u2.values()[x] * grad.u2.values()[x]
                    })
                    .collect()
            })
            .collect();
        if let Some((t_prev, q)) = &self.prev {
            let half = 0.5 * (t - t_prev);
            for (c, (i, j)) in self.pairs().into_iter().enumerate() {
                for (x, acc) in self.products[c].iter_mut().enumerate() {
                    *acc += half * (q[i][x] * q[j][x] + d[i][x] * d[j][x]);
                }
            }
        }
        self.prev = Some((t, d));
        Ok(())
    }
}

/// Least-squares fit of several noise amplitudes from the pointwise
/// quadratic variation, which is overdetermined in space.
pub fn estimate_modes(traj: &Trajectory, basis: &[Wavevector]) -> Result<ModeEstimate> {
    let mut acc = ModeFitAccumulator::new(traj.grid(), basis)?;
    traj.replay(&mut acc)?;
    acc.finish()
}
