//! Forced and damped stochastic Euler vorticity equation
//!
//! ```text
//! dω + u·∇ω dt + ξ·∇ω ∘ dW = (Q − rω) dt
//! ```
//!
//! integrated with the three-stage SSPRK3 scheme. In the default
//! (Stratonovich) scheme each stage applies the increment operator
//! `F(ω) = (−u·∇ω + Q − rω) dt − ξ·∇ω ΔW`, so the noise enters inside the
//! Runge–Kutta stages. The Itô scheme integrates the drift plus the
//! correction `½ ξ·∇(ξ·∇ω)` with SSPRK3 and adds an explicit
//! Euler–Maruyama noise increment evaluated at the start of the step.
//!
//! The state is kept in spectral space and every quadratic product is
//! truncated by the 2/3 rule.

use std::f64::consts::PI;

use log::warn;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{
    advection, biot_savart, dealias, mean, to_spectral, Grid, ScalarField,
};
use crate::noise::{brownian_increments, BrownianPath, NoiseModel};
use crate::spectral::{derivative_factor, wavenumber, Fft2d};

/// CFL number above which a warning is logged. Steps abort above 1.
pub const CFL_WARN: f64 = 0.5;

/// Large-scale forcing `Q = a (cos(2π m y) + sin(2π m x))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Forcing {
    pub amplitude: f64,
    pub wavenumber: i32,
}

impl Forcing {
    pub const fn none() -> Self {
        Self {
            amplitude: 0.0,
            wavenumber: 4,
        }
    }

    pub fn field(&self, grid: Grid) -> ScalarField {
        let (a, m) = (self.amplitude, self.wavenumber as f64);
        ScalarField::from_fn(grid, |x, y| {
            a * ((2.0 * PI * m * y).cos() + (2.0 * PI * m * x).sin())
        })
    }
}

impl Default for Forcing {
    /// `Q = 0.01 (cos 8πy + sin 8πx)`.
    fn default() -> Self {
        Self {
            amplitude: 0.01,
            wavenumber: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseScheme {
    #[default]
    Stratonovich,
    Ito,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    pub grid: Grid,
    pub dt: f64,
    pub t_end: f64,
    /// Linear damping rate `r`.
    pub damping: f64,
    pub forcing: Forcing,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Record a snapshot every `stride` steps.
    pub stride: usize,
    /// Include the nonlinear `u·∇ω` term.
    pub advection: bool,
    pub scheme: NoiseScheme,
}

impl SimParams {
    /// Deterministic, unforced, undamped, noiseless run.
    pub fn inviscid(grid: Grid, dt: f64, t_end: f64) -> Self {
        Self {
            grid,
            dt,
            t_end,
            damping: 0.0,
            forcing: Forcing::none(),
            noise: NoiseModel::none(),
            seed: 0,
            stride: 1,
            advection: true,
            scheme: NoiseScheme::Stratonovich,
        }
    }

    /// Number of steps `t_end / dt`, which must be a whole number.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be non-negative, got {}",
                self.t_end
            )));
        }
        let ratio = self.t_end / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "t_end = {} is not a whole number of steps of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.n_steps()?;
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        if !self.damping.is_finite() || self.damping < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "damping must be non-negative, got {}",
                self.damping
            )));
        }
        for m in self.noise.modes() {
            crate::noise::basis_stream(m.k, self.grid)?;
        }
        Ok(())
    }
}

/// Consumer of snapshots as a simulation produces them.
pub trait SnapshotSink {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()>;
}

impl<S: SnapshotSink + ?Sized> SnapshotSink for &mut S {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        (**self).observe(t, omega)
    }
}

impl<A: SnapshotSink, B: SnapshotSink> SnapshotSink for (A, B) {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        self.0.observe(t, omega)?;
        self.1.observe(t, omega)
    }
}

/// What a trajectory file records about the run that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryMeta {
    pub grid: Grid,
    pub dt: f64,
    pub seed: u64,
    pub noise: NoiseModel,
}

impl From<&SimParams> for TrajectoryMeta {
    fn from(p: &SimParams) -> Self {
        Self {
            grid: p.grid,
            dt: p.dt,
            seed: p.seed,
            noise: p.noise.clone(),
        }
    }
}

/// Time-ordered vorticity snapshots on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    meta: TrajectoryMeta,
    times: Vec<f64>,
    snapshots: Vec<ScalarField>,
}

impl Trajectory {
    pub fn new(meta: TrajectoryMeta) -> Self {
        Self {
            meta,
            times: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, omega: ScalarField) -> Result<()> {
        if omega.grid() != self.meta.grid {
            return Err(Error::GridMismatch {
                left: self.meta.grid.n(),
                right: omega.grid().n(),
            });
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::Trajectory(format!(
                    "times must increase strictly: {t} after {last}"
                )));
            }
        }
        self.times.push(t);
        self.snapshots.push(omega);
        Ok(())
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn grid(&self) -> Grid {
        self.meta.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[ScalarField] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&ScalarField> {
        self.snapshots.last()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &ScalarField)> {
        self.times.iter().copied().zip(&self.snapshots)
    }

    /// Replays every snapshot into `sink`.
    pub fn replay(&self, sink: &mut impl SnapshotSink) -> Result<()> {
        for (t, w) in self.iter() {
            sink.observe(t, w)?;
        }
        Ok(())
    }
}

impl SnapshotSink for Trajectory {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        self.push(t, omega.clone())
    }
}

/// `ω₀ = sin 8πx sin 8πy + 0.4 cos 6πx cos 6πy + 0.3 cos 10πx cos 4πy
///  + 0.02 sin 2πy + 0.02 sin 2πx`.
pub fn initial_condition(grid: Grid) -> Result<ScalarField> {
    if grid.n() < 32 {
        return Err(Error::InvalidParameter(format!(
            "initial condition needs n >= 32 to resolve its modes, got {}",
            grid.n()
        )));
    }
    Ok(ScalarField::from_fn(grid, |x, y| {
        (8.0 * PI * x).sin() * (8.0 * PI * y).sin()
            + 0.4 * (6.0 * PI * x).cos() * (6.0 * PI * y).cos()
            + 0.3 * (10.0 * PI * x).cos() * (4.0 * PI * y).cos()
            + 0.02 * (2.0 * PI * y).sin()
            + 0.02 * (2.0 * PI * x).sin()
    }))
}

/// `−u·∇ω + Q − rω` with `u` the Biot–Savart velocity, dealiased.
pub fn deterministic_rhs(omega: &ScalarField, params: &SimParams) -> Result<ScalarField> {
    let grid = omega.grid();
    let mut rhs = params.forcing.field(grid).zip_with(omega, |q, w| q - params.damping * w)?;
    if params.advection {
        rhs = &rhs - &advection(&biot_savart(omega), omega)?;
    }
    Ok(dealias(&rhs))
}

/// Spectral-space time stepper holding all per-run work buffers.
pub struct Stepper {
    grid: Grid,
    fft: Fft2d,
    scratch: Vec<Complex64>,
    /// `2π k₁` and `2π k₂` per storage index (Nyquist zeroed).
    kd: Vec<f64>,
    /// `1 / (4π²|k|²)`, zero at `k = 0`.
    inv_lap: Vec<f64>,
    mask: Vec<bool>,
    forcing_hat: Vec<Complex64>,
    xi1: Vec<f64>,
    xi2: Vec<f64>,
    has_noise: bool,
    damping: f64,
    advection: bool,
    scheme: NoiseScheme,
    omega_hat: Vec<Complex64>,
    stage1: Vec<Complex64>,
    stage2: Vec<Complex64>,
    incr: Vec<Complex64>,
    noise_incr: Vec<Complex64>,
    buf_a: Vec<Complex64>,
    buf_b: Vec<Complex64>,
    ito_once: Vec<Complex64>,
    ito_twice: Vec<Complex64>,
    step: usize,
    dt: f64,
    max_cfl: f64,
    warned: bool,
}

impl std::fmt::Debug for Stepper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stepper")
            .field("n", &self.grid.n())
            .field("step", &self.step)
            .finish()
    }
}

impl Stepper {
    pub fn new(params: &SimParams, omega0: &ScalarField) -> Result<Self> {
        params.validate()?;
        let grid = params.grid;
        if omega0.grid() != grid {
            return Err(Error::GridMismatch {
                left: grid.n(),
                right: omega0.grid().n(),
            });
        }
        let n = grid.n();
        let fft = Fft2d::new(n);
        let scratch = fft.make_scratch();
        let kd: Vec<f64> = (0..n).map(|a| derivative_factor(a, n)).collect();
        let mut inv_lap = vec![0.0; grid.len()];
        let mut mask = vec![false; grid.len()];
        for a in 0..n {
            let k1 = wavenumber(a, n);
            for b in 0..n {
                let k2 = wavenumber(b, n);
                let ksq = (k1 * k1 + k2 * k2) as f64;
                if ksq > 0.0 {
                    inv_lap[a * n + b] = 1.0 / (4.0 * PI * PI * ksq);
                }
                mask[a * n + b] = grid.in_dealiased_band(k1, k2);
            }
        }
        let xi = params.noise.xi(grid)?;
        let zero = vec![Complex64::default(); grid.len()];
        Ok(Self {
            grid,
            scratch,
            kd,
            inv_lap,
            mask,
            forcing_hat: to_spectral(&params.forcing.field(grid)).coeffs().to_vec(),
            has_noise: xi.max_abs() > 0.0,
            xi1: xi.u1.into_values(),
            xi2: xi.u2.into_values(),
            damping: params.damping,
            advection: params.advection,
            scheme: params.scheme,
            omega_hat: to_spectral(omega0).coeffs().to_vec(),
            stage1: zero.clone(),
            stage2: zero.clone(),
            incr: zero.clone(),
            noise_incr: zero.clone(),
            buf_a: zero.clone(),
            buf_b: zero.clone(),
            ito_once: zero.clone(),
            ito_twice: zero,
            fft,
            step: 0,
            dt: params.dt,
            max_cfl: 0.0,
            warned: false,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Largest CFL number `dt·max|u|/h` seen so far.
    pub fn max_cfl(&self) -> f64 {
        self.max_cfl
    }

    pub fn vorticity(&mut self) -> ScalarField {
        self.buf_a.copy_from_slice(&self.omega_hat);
        self.fft.inverse(&mut self.buf_a, &mut self.scratch);
        let values = self.buf_a.iter().map(|c| c.re).collect();
        ScalarField::new(self.grid, values).expect("grid-sized buffer")
    }

    /// Advances one step with Brownian increment `dw`.
    pub fn step(&mut self, dw: f64) -> Result<()> {
        let dt = self.dt;
        let w = std::mem::take(&mut self.omega_hat);
        let mut s1 = std::mem::take(&mut self.stage1);
        let mut s2 = std::mem::take(&mut self.stage2);
        let mut f = std::mem::take(&mut self.incr);

        let (stage_dw, ito) = match self.scheme {
            NoiseScheme::Stratonovich => (dw, false),
            NoiseScheme::Ito => (0.0, true),
        };

        let result = (|| -> Result<()> {
            if ito && self.has_noise {
                // Euler–Maruyama increment −ΔW P[ξ·∇ω] at the step start.
                let mut g = std::mem::take(&mut self.noise_incr);
                self.transport_into(&w, 0.0, 1.0, &mut g);
                for c in g.iter_mut() {
                    *c *= -dw;
                }
                self.noise_incr = g;
            }

            self.increment(&w, dt, stage_dw, ito, true, &mut f)?;
            for i in 0..w.len() {
                s1[i] = w[i] + f[i];
            }
            self.increment(&s1, dt, stage_dw, ito, false, &mut f)?;
            for i in 0..w.len() {
                s2[i] = 0.75 * w[i] + 0.25 * (s1[i] + f[i]);
            }
            self.increment(&s2, dt, stage_dw, ito, false, &mut f)?;
            for i in 0..w.len() {
                s1[i] = w[i] / 3.0 + (2.0 / 3.0) * (s2[i] + f[i]);
            }
            if ito && self.has_noise {
                for (s, g) in s1.iter_mut().zip(&self.noise_incr) {
                    *s += g;
                }
            }
            Ok(())
        })();

        // s1 now holds the new state; recycle the old one as stage storage.
        self.omega_hat = s1;
        self.stage1 = w;
        self.stage2 = s2;
        self.incr = f;
        result?;
        self.step += 1;
        if self.omega_hat.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::BlowUp {
                step: self.step,
                time: self.time(),
            });
        }
        Ok(())
    }

    /// Writes the dealiased spectrum of `(a·u + b·ξ)·∇ω` into `out`, where `u` is
    /// the Biot–Savart velocity of `w_hat`. Returns `max|u|` when `a ≠ 0`.
    fn transport_into(&mut self, w_hat: &[Complex64], a: f64, b: f64, out: &mut [Complex64]) -> f64 {
        let n = self.grid.n();
        let with_u = a != 0.0;
        let with_xi = b != 0.0 && self.has_noise;
        // buf_a <- ∂₁ω + i ∂₂ω
        for p in 0..n {
            for q in 0..n {
                let i = p * n + q;
                let c = w_hat[i];
                let d1 = Complex64::new(-self.kd[p] * c.im, self.kd[p] * c.re);
                let d2 = Complex64::new(-self.kd[q] * c.im, self.kd[q] * c.re);
                self.buf_a[i] = d1 + Complex64::new(-d2.im, d2.re);
            }
        }
        self.fft.inverse(&mut self.buf_a, &mut self.scratch);
        let mut umax2: f64 = 0.0;
        if with_u {
            // buf_b <- u₁ + i u₂ with u = ∇⊥ψ = (∂₂ψ, −∂₁ψ)
            for p in 0..n {
                for q in 0..n {
                    let i = p * n + q;
                    let psi = w_hat[i] * self.inv_lap[i];
                    let u1 = Complex64::new(-self.kd[q] * psi.im, self.kd[q] * psi.re);
                    let u2 = -Complex64::new(-self.kd[p] * psi.im, self.kd[p] * psi.re);
                    self.buf_b[i] = u1 + Complex64::new(-u2.im, u2.re);
                }
            }
            self.fft.inverse(&mut self.buf_b, &mut self.scratch);
        }
        for (i, o) in out.iter_mut().enumerate() {
            let (g1, g2) = (self.buf_a[i].re, self.buf_a[i].im);
            let mut v1 = 0.0;
            let mut v2 = 0.0;
            if with_u {
                let (u1, u2) = (self.buf_b[i].re, self.buf_b[i].im);
                umax2 = umax2.max(u1 * u1 + u2 * u2);
                v1 += a * u1;
                v2 += a * u2;
            }
            if with_xi {
                v1 += b * self.xi1[i];
                v2 += b * self.xi2[i];
            }
            *o = Complex64::new(v1 * g1 + v2 * g2, 0.0);
        }
        self.fft.forward(out, &mut self.scratch);
        for (c, &keep) in out.iter_mut().zip(&self.mask) {
            if !keep {
                *c = Complex64::default();
            }
        }
        umax2.sqrt()
    }

    /// Increment operator for one SSPRK3 stage.
    fn increment(
        &mut self,
        w_hat: &[Complex64],
        dt: f64,
        dw: f64,
        ito: bool,
        check_cfl: bool,
        out: &mut [Complex64],
    ) -> Result<()> {
        let a = if self.advection { dt } else { 0.0 };
        let b = if self.has_noise { dw } else { 0.0 };
        if a != 0.0 || b != 0.0 {
            let umax = self.transport_into(w_hat, a, b, out);
            if check_cfl && a != 0.0 {
                self.check_cfl(umax)?;
            }
            for c in out.iter_mut() {
                *c = -*c;
            }
        } else {
            out.iter_mut().for_each(|c| *c = Complex64::default());
        }
        for i in 0..out.len() {
            out[i] += dt * (self.forcing_hat[i] - self.damping * w_hat[i]);
        }
        if ito && self.has_noise {
            // ½ dt P[ξ·∇ P[ξ·∇ω]]
            let mut g = std::mem::take(&mut self.ito_once);
            let mut gg = std::mem::take(&mut self.ito_twice);
            self.transport_into(w_hat, 0.0, 1.0, &mut g);
            self.transport_into(&g, 0.0, 1.0, &mut gg);
            for i in 0..out.len() {
                out[i] += 0.5 * dt * gg[i];
            }
            self.ito_once = g;
            self.ito_twice = gg;
        }
        Ok(())
    }

    fn check_cfl(&mut self, umax: f64) -> Result<()> {
        let cfl = self.dt * umax / self.grid.h();
        self.max_cfl = self.max_cfl.max(cfl);
        if cfl > 1.0 {
            return Err(Error::Cfl {
                time: self.time(),
                cfl,
            });
        }
        if cfl > CFL_WARN && !self.warned {
            warn!("CFL number {cfl:.3} exceeds {CFL_WARN} at t = {}", self.time());
            self.warned = true;
        }
        Ok(())
    }
}

/// One SSPRK3 step of `params` from `omega` with Brownian increment `dw`.
pub fn ssprk3_step(omega: &ScalarField, params: &SimParams, dw: f64) -> Result<ScalarField> {
    let mut stepper = Stepper::new(params, omega)?;
    stepper.step(dw)?;
    Ok(stepper.vorticity())
}

/// Brownian path for `params`, empty when the horizon is zero.
pub fn brownian_path_for(params: &SimParams) -> Result<BrownianPath> {
    let steps = params.n_steps()?;
    if steps == 0 {
        BrownianPath::from_increments(params.dt, params.seed, Vec::new())
    } else {
        brownian_increments(steps, params.dt, params.seed)
    }
}

/// Runs `params` from `omega0` along `path`, feeding the initial state and
/// every `stride`-th step (plus the final step) to `sink`.
pub fn simulate_into(
    omega0: &ScalarField,
    params: &SimParams,
    path: &BrownianPath,
    sink: &mut impl SnapshotSink,
) -> Result<ScalarField> {
    let steps = params.n_steps()?;
    if path.len() < steps {
        return Err(Error::InvalidParameter(format!(
            "Brownian path has {} increments, run needs {steps}",
            path.len()
        )));
    }
    let mut stepper = Stepper::new(params, omega0)?;
    sink.observe(0.0, omega0)?;
    let mut last = omega0.clone();
    for (i, &dw) in path.increments()[..steps].iter().enumerate() {
        stepper.step(dw)?;
        let done = i + 1;
        if done % params.stride == 0 || done == steps {
            last = stepper.vorticity();
            sink.observe(done as f64 * params.dt, &last)?;
        }
    }
    Ok(last)
}

/// Runs `params` from `omega0` with the Brownian path drawn from `params.seed`.
pub fn simulate(omega0: &ScalarField, params: &SimParams) -> Result<Trajectory> {
    let path = brownian_path_for(params)?;
    let mut traj = Trajectory::new(TrajectoryMeta::from(params));
    simulate_into(omega0, params, &path, &mut traj)?;
    Ok(traj)
}

/// Result of a spin-up run.
#[derive(Clone, Debug)]
pub struct SpinUp {
    pub state: ScalarField,
    /// `(t, kinetic energy, mean vorticity)` at every recorded snapshot.
    pub history: Vec<(f64, f64, f64)>,
}

struct EnergyMonitor(Vec<(f64, f64, f64)>);

impl SnapshotSink for EnergyMonitor {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        self.0
            .push((t, crate::field::kinetic_energy(omega), mean(omega)));
        Ok(())
    }
}

/// Integrates from [`initial_condition`] over `params.t_end` and returns the
/// terminal state. `params` carries the spin-up step size, horizon, and
/// (typically weaker) noise.
pub fn spin_up(params: &SimParams) -> Result<SpinUp> {
    let omega0 = initial_condition(params.grid)?;
    let path = brownian_path_for(params)?;
    let mut monitor = EnergyMonitor(Vec::new());
    let state = simulate_into(&omega0, params, &path, &mut monitor)?;
    Ok(SpinUp {
        state,
        history: monitor.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{inner, kinetic_energy, l2_norm};
    use crate::noise::{xi_transport, Wavevector};
    use crate::test_support::band_limited;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    fn assert_close(a: &ScalarField, b: &ScalarField, tol: f64) {
        let d = (a - b).max_abs();
        assert!(d <= tol, "max difference {d:e} > {tol:e}");
    }

    #[test]
    fn initial_condition_values() {
        assert!(initial_condition(grid(16)).is_err());
        let w = initial_condition(grid(64)).unwrap();
        assert!((w.at(0, 0) - 0.7).abs() < 1e-14);
        assert!(mean(&w).abs() < 1e-12);
        assert!((w.at(16, 16) - 0.04).abs() < 1e-14);
    }

    #[test]
    fn n_steps_validation() {
        let g = grid(16);
        assert_eq!(SimParams::inviscid(g, 0.1, 1.0).n_steps().unwrap(), 10);
        assert_eq!(SimParams::inviscid(g, 1.0 / 200_000.0, 1.0).n_steps().unwrap(), 200_000);
        assert!(SimParams::inviscid(g, 0.3, 1.0).n_steps().is_err());
        assert!(SimParams::inviscid(g, 0.0, 1.0).n_steps().is_err());
        assert_eq!(SimParams::inviscid(g, 0.1, 0.0).n_steps().unwrap(), 0);
    }

    #[test]
    fn rhs_cases() {
        let g = grid(32);
        let mut p = SimParams::inviscid(g, 1e-3, 1.0);
        p.forcing = Forcing::default();
        p.damping = 0.001;
        let rest = deterministic_rhs(&ScalarField::zeros(g), &p).unwrap();
        assert_close(&rest, &p.forcing.field(g), 1e-15);

        let shear = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin());
        let q0 = SimParams::inviscid(g, 1e-3, 1.0);
        assert!(deterministic_rhs(&shear, &q0).unwrap().max_abs() < 1e-10);

        let w = band_limited(g, 61);
        let rhs = deterministic_rhs(&w, &p).unwrap();
        let expect = inner(&w, &p.forcing.field(g)).unwrap() - p.damping * l2_norm(&w).powi(2);
        assert!((inner(&w, &rhs).unwrap() - expect).abs() < 1e-8);
    }

    #[test]
    fn stepper_increment_matches_field_operators() {
        // One SSPRK3 step built from the field-level operators.
        let g = grid(32);
        let mut p = SimParams::inviscid(g, 1e-2, 1.0);
        p.forcing = Forcing::default();
        p.damping = 0.01;
        p.noise = NoiseModel::single(Wavevector::new(2, 4), 0.05);
        let xi = p.noise.xi(g).unwrap();
        let dw = 0.07;
        let f = |w: &ScalarField| -> ScalarField {
            let det = deterministic_rhs(w, &p).unwrap().scaled(p.dt);
            &det - &xi_transport(&xi, w).unwrap().scaled(dw)
        };
        let w0 = band_limited(g, 71);
        let w1 = &w0 + &f(&w0);
        let w2 = &w0.scaled(0.75) + &(&w1 + &f(&w1)).scaled(0.25);
        let expect = &w0.scaled(1.0 / 3.0) + &(&w2 + &f(&w2)).scaled(2.0 / 3.0);
        let got = ssprk3_step(&w0, &p, dw).unwrap();
        assert_close(&got, &expect, 1e-12);
    }

    #[test]
    fn zero_increment_is_deterministic_step() {
        let g = grid(32);
        let mut p = SimParams::inviscid(g, 1e-2, 1.0);
        p.forcing = Forcing::default();
        let det = ssprk3_step(&band_limited(g, 3), &p, 0.0).unwrap();
        p.noise = NoiseModel::single(Wavevector::new(2, 4), 0.05);
        let noisy = ssprk3_step(&band_limited(g, 3), &p, 0.0).unwrap();
        assert_eq!(det, noisy);
    }

    #[test]
    fn step_consistency_with_euler() {
        let g = grid(32);
        let w0 = band_limited(g, 5);
        let mut errs = Vec::new();
        for dt in [1e-2, 5e-3] {
            let p = SimParams::inviscid(g, dt, 1.0);
            let rk = ssprk3_step(&w0, &p, 0.0).unwrap();
            let euler = &w0 + &deterministic_rhs(&w0, &p).unwrap().scaled(dt);
            errs.push((&rk - &euler).max_abs());
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn deterministic_temporal_order_is_three() {
        let g = grid(32);
        let w0 = initial_condition(g).unwrap();
        let final_state = |dt: f64| {
            let mut p = SimParams::inviscid(g, dt, 1.0);
            p.forcing = Forcing::default();
            p.damping = 0.001;
            p.stride = usize::MAX;
            simulate(&w0, &p).unwrap().last().unwrap().clone()
        };
        let reference = final_state(0.025 / 16.0);
        let err = |dt: f64| l2_norm(&(&final_state(dt) - &reference));
        let (coarse, fine) = (err(0.05), err(0.025));
        let order = (coarse / fine).log2();
        assert!(order >= 2.7, "order = {order}, errors {coarse:e} {fine:e}");
    }

    #[test]
    fn pure_noise_is_an_l2_isometry() {
        let g = grid(32);
        let dt = 1e-3;
        let mut p = SimParams::inviscid(g, dt, 1.0);
        p.advection = false;
        p.noise = NoiseModel::single(Wavevector::new(2, 4), 0.001);
        p.seed = 3;
        p.stride = 1000;
        let w0 = band_limited(g, 9);
        let traj = simulate(&w0, &p).unwrap();
        let ratio = l2_norm(traj.last().unwrap()) / l2_norm(&w0);
        assert!((ratio - 1.0).abs() <= 10.0 * dt, "ratio = {ratio}");
    }

    #[test]
    fn damping_only_decays_exponentially() {
        let g = grid(32);
        let mut p = SimParams::inviscid(g, 1e-2, 1.0);
        p.advection = false;
        p.damping = 0.3;
        p.stride = 100;
        let w0 = band_limited(g, 13);
        let traj = simulate(&w0, &p).unwrap();
        let expect = (-0.3f64).exp() * l2_norm(&w0);
        assert!((l2_norm(traj.last().unwrap()) - expect).abs() < 1e-8);
    }

    #[test]
    fn simulate_edge_cases() {
        let g = grid(32);
        let w0 = initial_condition(g).unwrap();
        let p = SimParams::inviscid(g, 1e-3, 0.0);
        let traj = simulate(&w0, &p).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.snapshots()[0], w0);

        let mut p = SimParams::inviscid(g, 1e-3, 0.05);
        p.forcing = Forcing::default();
        p.damping = 0.001;
        p.noise = NoiseModel::single(Wavevector::new(2, 4), 0.01);
        p.seed = 99;
        p.stride = 7;
        let a = simulate(&w0, &p).unwrap();
        let b = simulate(&w0, &p).unwrap();
        assert_eq!(a, b);
        // 50 steps at stride 7: t0, 7 multiples, and the final step.
        assert_eq!(a.len(), 1 + 7 + 1);
        assert!(a.times().windows(2).all(|w| w[1] > w[0]));
        for s in a.snapshots() {
            assert!(mean(s).abs() <= 1e-10);
        }
    }

    #[test]
    fn cfl_violation_aborts() {
        let g = grid(32);
        let w0 = initial_condition(g).unwrap().scaled(1e4);
        let p = SimParams::inviscid(g, 0.1, 1.0);
        assert!(matches!(simulate(&w0, &p), Err(Error::Cfl { .. })));
    }

    #[test]
    fn spin_up_zero_duration_and_bounded_energy() {
        let g = grid(32);
        let mut p = SimParams::inviscid(g, 1e-3, 0.0);
        let s = spin_up(&p).unwrap();
        assert_eq!(s.state, initial_condition(g).unwrap());

        p.t_end = 0.5;
        p.forcing = Forcing::default();
        p.damping = 0.001;
        p.noise = NoiseModel::single(Wavevector::new(2, 4), 1e-6);
        p.stride = 50;
        let s = spin_up(&p).unwrap();
        let e0 = s.history[0].1;
        assert!(s.history.iter().all(|&(_, e, _)| e > 0.0 && e < 10.0 * e0));
        assert!(mean(&s.state).abs() <= 1e-10);
        assert!((kinetic_energy(&s.state) - s.history.last().unwrap().1).abs() < 1e-15);
    }

    /// Pure transport noise with a frozen field is solved exactly by
    /// transporting along `ξ` for the total time `W_T`. Returns the relative
    /// error of each scheme against that solution for the given increment
    /// grouping of a fine path.
    fn pure_noise_errors(seed: u64, groups: &[usize]) -> Vec<(f64, f64)> {
        let g = grid(32);
        let w0 = initial_condition(g).unwrap();
        let fine_dt = 2.5e-4;
        let fine = brownian_increments(800, fine_dt, seed).unwrap();
        let mut p = SimParams::inviscid(g, fine_dt, 0.2);
        p.advection = false;
        p.noise = NoiseModel::single(Wavevector::new(2, 4), 0.003);
        p.stride = usize::MAX;
        let run = |p: &SimParams, path: &BrownianPath| {
            let mut t = Trajectory::new(TrajectoryMeta::from(p));
            simulate_into(&w0, p, path, &mut t).unwrap()
        };
        let reference = {
            let mut q = p.clone();
            q.dt = fine_dt / 10.0;
            let flat = vec![fine.terminal() / 8000.0; 8000];
            run(&q, &BrownianPath::from_increments(q.dt, seed, flat).unwrap())
        };
        let rel = |w: &ScalarField| l2_norm(&(w - &reference)) / l2_norm(&reference);
        groups
            .iter()
            .map(|&group| {
                let mut q = p.clone();
                q.dt = fine_dt * group as f64;
                let incs = fine.increments().chunks(group).map(|c| c.iter().sum()).collect();
                let path = BrownianPath::from_increments(q.dt, seed, incs).unwrap();
                let strat = rel(&run(&q, &path));
                q.scheme = NoiseScheme::Ito;
                (strat, rel(&run(&q, &path)))
            })
            .collect()
    }

    #[test]
    fn noise_schemes_converge_to_exact_transport() {
        let seeds = 0..6u64;
        let mut ms = [0.0; 2];
        let mut strat = [0.0; 2];
        for seed in seeds.clone() {
            for (i, (s, ito)) in pure_noise_errors(seed, &[8, 1]).into_iter().enumerate() {
                ms[i] += ito * ito;
                strat[i] += s * s;
            }
        }
        let n = seeds.count() as f64;
        let rms = |v: f64| (v / n).sqrt();
        // Stratonovich: strong order one for a single noise field.
        assert!(rms(strat[1]) < 0.25 * rms(strat[0]), "{strat:?}");
        assert!(rms(strat[1]) < 1e-3);
        // Itô with Euler–Maruyama noise: strong order one half.
        assert!(rms(ms[1]) < 0.7 * rms(ms[0]), "{ms:?}");
        assert!(rms(ms[1]) < 0.05);
    }
}
