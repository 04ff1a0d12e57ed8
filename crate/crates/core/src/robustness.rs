//! Pathwise robustness of the equation in the noise field `ξ`.
//!
//! Two solutions driven by the same Brownian path but different `ξ` (or
//! different initial data) are compared in `L²`. The tools here produce the
//! distance series, the Gronwall discount
//!
//! ```text
//! γ(T) = C₁ ∫₀ᵀ ‖ω¹_s‖ᵖ_{k,2} ds + C₂ Tᵖ,
//! ```
//!
//! a scaling study of `sup_t ‖ω¹ − ω²‖₂` against `‖ξ¹ − ξ²‖₂`, and the inner
//! products appearing in the energy estimate for `ω̄ = ω¹ − ω²`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{biot_savart, inner, l2_norm, sobolev_norm, transport, ScalarField, VectorField};
use crate::noise::{brownian_increments, BrownianPath, NoiseMode, NoiseModel, Wavevector};
use crate::solver::{simulate_into, SimParams, Stepper, Trajectory, TrajectoryMeta};

/// Two trajectories stepped with the same Brownian increments.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedRun {
    pub first: Trajectory,
    pub second: Trajectory,
}

impl PairedRun {
    /// Pairs two existing trajectories, which must share grid, step size,
    /// seed and time stamps.
    pub fn from_trajectories(first: Trajectory, second: Trajectory) -> Result<Self> {
        let (a, b) = (first.meta(), second.meta());
        if a.grid != b.grid {
            return Err(Error::GridMismatch {
                left: a.grid.n(),
                right: b.grid.n(),
            });
        }
        if a.dt != b.dt {
            return Err(Error::InvalidParameter(format!(
                "paired runs need equal time steps, got {} and {}",
                a.dt, b.dt
            )));
        }
        if a.seed != b.seed {
            return Err(Error::InvalidParameter(format!(
                "paired runs need a shared Brownian path, got seeds {} and {}",
                a.seed, b.seed
            )));
        }
        if first.times() != second.times() {
            return Err(Error::InvalidParameter("paired runs have different time stamps".into()));
        }
        if first.is_empty() {
            return Err(Error::TooFewSnapshots(0));
        }
        Ok(Self { first, second })
    }

    pub fn times(&self) -> &[f64] {
        self.first.times()
    }

    /// Same pair with the labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
        }
    }
}

/// Runs `(ω₀¹, ξ¹)` and `(ω₀², ξ²)` with the remaining settings of `params`
/// and the Brownian path drawn from `params.seed`.
pub fn paired_simulate(
    omega1: &ScalarField,
    omega2: &ScalarField,
    xi1: &NoiseModel,
    xi2: &NoiseModel,
    params: &SimParams,
) -> Result<PairedRun> {
    let path = crate::solver::brownian_path_for(params)?;
    let run = |omega: &ScalarField, xi: &NoiseModel| -> Result<Trajectory> {
        let mut p = params.clone();
        p.noise = xi.clone();
        let mut traj = Trajectory::new(TrajectoryMeta::from(&p));
        simulate_into(omega, &p, &path, &mut traj)?;
        Ok(traj)
    };
    PairedRun::from_trajectories(run(omega1, xi1)?, run(omega2, xi2)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub times: Vec<f64>,
    /// `‖ω¹_{tᵢ} − ω²_{tᵢ}‖₂`.
    pub distances: Vec<f64>,
    pub sup_distance: f64,
    /// `‖ω₀¹ − ω₀²‖₂`.
    pub initial_distance: f64,
    /// `‖ξ¹ − ξ²‖₂`.
    pub xi_distance: f64,
    pub gamma: f64,
}

/// Exponent, Sobolev order and constants of the Gronwall discount.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallParams {
    pub p: f64,
    pub k: i32,
    pub c1: f64,
    pub c2: f64,
}

impl Default for GronwallParams {
    fn default() -> Self {
        Self {
            p: 2.0,
            k: 3,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

/// Trapezoidal `∫₀ᵀ g` over samples `(tᵢ, gᵢ)`, interpolating linearly when
/// `T` falls between samples and holding the last value beyond them.
fn trapezoid_to(samples: &[(f64, f64)], t_end: f64) -> f64 {
    let mut total = 0.0;
    for w in samples.windows(2) {
        let ((t0, g0), (t1, g1)) = (w[0], w[1]);
        if t0 >= t_end {
            break;
        }
        if t1 <= t_end {
            total += 0.5 * (t1 - t0) * (g0 + g1);
        } else {
            let g = g0 + (g1 - g0) * (t_end - t0) / (t1 - t0);
            total += 0.5 * (t_end - t0) * (g0 + g);
            return total;
        }
    }
    if let Some(&(t_last, g_last)) = samples.last() {
        if t_end > t_last {
            total += (t_end - t_last) * g_last;
        }
    }
    total
}

fn gamma_from_norms(norms: &[(f64, f64)], params: GronwallParams, t_end: f64) -> f64 {
    let powered: Vec<(f64, f64)> = norms.iter().map(|&(t, v)| (t, v.powf(params.p))).collect();
    params.c1 * trapezoid_to(&powered, t_end) + params.c2 * t_end.powf(params.p)
}

/// `γ(T)` along the reference trajectory, measured from its first snapshot.
pub fn gronwall_discount(traj: &Trajectory, params: GronwallParams, t_end: f64) -> Result<f64> {
    if params.k < 0 {
        return Err(Error::NegativeSobolevOrder(params.k));
    }
    if t_end < 0.0 {
        return Err(Error::InvalidParameter(format!("horizon must be nonnegative, got {t_end}")));
    }
    let t0 = traj.times().first().copied().unwrap_or(0.0);
    let norms = traj
        .iter()
        .map(|(t, w)| Ok((t - t0, sobolev_norm(w, params.k)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(gamma_from_norms(&norms, params, t_end))
}

/// `‖ξ¹ − ξ²‖₂` on the grid of `grid_of`.
pub fn xi_distance(xi1: &NoiseModel, xi2: &NoiseModel, grid: crate::field::Grid) -> Result<f64> {
    Ok(xi1.xi(grid)?.sub(&xi2.xi(grid)?)?.l2_norm())
}

pub fn distance_series(
    pair: &PairedRun,
    xi1: &NoiseModel,
    xi2: &NoiseModel,
    gronwall: GronwallParams,
) -> Result<RobustnessReport> {
    let distances = pair
        .first
        .snapshots()
        .iter()
        .zip(pair.second.snapshots())
        .map(|(a, b)| l2_norm(&(a - b)))
        .collect::<Vec<_>>();
    let times = pair.times().to_vec();
    let horizon = times.last().unwrap_or(&0.0) - times.first().unwrap_or(&0.0);
    Ok(RobustnessReport {
        sup_distance: distances.iter().copied().fold(0.0, f64::max),
        initial_distance: distances[0],
        xi_distance: xi_distance(xi1, xi2, pair.first.grid())?,
        gamma: gronwall_discount(&pair.first, gronwall, horizon)?,
        times,
        distances,
    })
}

/// Noise mode whose field `∇⊥(β cos(2π m·x))` has unit `L²` norm.
pub fn unit_perturbation(m: Wavevector) -> Result<NoiseMode> {
    if m.is_zero() {
        return Err(Error::ZeroWavevector);
    }
    Ok(NoiseMode {
        k: m,
        alpha: std::f64::consts::SQRT_2 / (2.0 * PI * m.norm()),
    })
}

/// `ξ¹ + δη` with `η` the unit perturbation along `m`.
pub fn perturbed(base: &NoiseModel, m: Wavevector, delta: f64) -> Result<NoiseModel> {
    let eta = unit_perturbation(m)?;
    let mut modes = base.modes().to_vec();
    match modes.iter_mut().find(|mode| mode.k == m) {
        Some(mode) => mode.alpha += delta * eta.alpha,
        None => modes.push(NoiseMode {
            k: m,
            alpha: delta * eta.alpha,
        }),
    }
    Ok(NoiseModel::new(modes))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingSetup {
    pub params: SimParams,
    pub initial: ScalarField,
    pub perturbation: Wavevector,
    pub deltas: Vec<f64>,
    pub ensemble: usize,
    pub gronwall: GronwallParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub delta: f64,
    pub xi_distance: f64,
    /// `sup_t ‖ω¹ − ω²‖₂` per ensemble member.
    pub sup_per_seed: Vec<f64>,
    pub mean_sup: f64,
    /// `E[sup_t ‖ω¹ − ω²‖₂ᵖ]`.
    pub mean_sup_pow: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    pub seeds: Vec<u64>,
    /// `γ(T)` of the reference run per ensemble member.
    pub gamma: Vec<f64>,
    /// Slope and intercept of `log mean_sup` against `log ‖ξ̄‖₂` over rows
    /// with positive `δ`.
    pub slope: f64,
    pub intercept: f64,
    /// Smallest `C` with `E[sup dᵖ] ≤ C ‖ξ̄‖₂ᵖ` over the rows.
    pub fitted_constant: f64,
    /// `ln` of the smallest `C` with `E[e^{−γ} sup dᵖ] ≤ C ‖ξ̄‖₂ᵖ`. Kept in log
    /// form because `e^{−γ}` underflows for realistic Sobolev norms.
    pub ln_discounted_constant: f64,
    /// Distance series of the largest `δ` for the first ensemble member.
    pub sample_series: Vec<(f64, f64)>,
}

/// Least-squares line through `(x, y)`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "a line fit needs at least two points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("line fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

struct MemberResult {
    sups: Vec<f64>,
    gamma: f64,
    series: Vec<(f64, f64)>,
}

/// One ensemble member: the reference run and one perturbed run per `δ`,
/// advanced in lockstep on a shared path.
fn scaling_member(setup: &ScalingSetup, path: &BrownianPath) -> Result<MemberResult> {
    let params = &setup.params;
    let steps = params.n_steps()?;
    let mut reference = Stepper::new(params, &setup.initial)?;
    let mut others = setup
        .deltas
        .iter()
        .map(|&d| {
            let mut p = params.clone();
            p.noise = perturbed(&params.noise, setup.perturbation, d)?;
            Stepper::new(&p, &setup.initial)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sups = vec![0.0; setup.deltas.len()];
    let mut norms = vec![(0.0, sobolev_norm(&setup.initial, setup.gronwall.k)?)];
    let mut series = vec![(0.0, 0.0)];
    let last = setup.deltas.len().checked_sub(1);
    for (i, &dw) in path.increments()[..steps].iter().enumerate() {
        reference.step(dw)?;
        for s in others.iter_mut() {
            s.step(dw)?;
        }
        let done = i + 1;
        if done % params.stride == 0 || done == steps {
            let t = done as f64 * params.dt;
            let w1 = reference.vorticity();
            norms.push((t, sobolev_norm(&w1, setup.gronwall.k)?));
            for (j, s) in others.iter_mut().enumerate() {
                let d = l2_norm(&(&w1 - &s.vorticity()));
                sups[j] = f64::max(sups[j], d);
                if Some(j) == last {
                    series.push((t, d));
                }
            }
        }
    }
    let horizon = steps as f64 * params.dt;
    Ok(MemberResult {
        sups,
        gamma: gamma_from_norms(&norms, setup.gronwall, horizon),
        series,
    })
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (values.iter().map(|v| (v - m).exp()).sum::<f64>() / values.len() as f64).ln()
}

/// Sweeps `δ` over `setup.deltas` with equal initial data. Ensemble members
/// use seeds `params.seed, params.seed + 1, …` and run concurrently.
pub fn scaling_study(setup: &ScalingSetup) -> Result<ScalingStudy> {
    if setup.ensemble == 0 {
        return Err(Error::InvalidParameter("ensemble size must be at least 1".into()));
    }
    if setup.deltas.is_empty() {
        return Err(Error::InvalidParameter("delta list is empty".into()));
    }
    if setup.gronwall.k < 0 {
        return Err(Error::NegativeSobolevOrder(setup.gronwall.k));
    }
    let steps = setup.params.n_steps()?;
    let seeds: Vec<u64> = (0..setup.ensemble as u64)
        .map(|i| setup.params.seed.wrapping_add(i))
        .collect();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len());
    let mut members: Vec<Option<Result<MemberResult>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in members.chunks_mut(seeds.len().div_ceil(workers)).enumerate() {
            let offset = w * seeds.len().div_ceil(workers);
            let seeds = &seeds;
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let seed = seeds[offset + i];
                    let result = if steps == 0 {
                        BrownianPath::from_increments(setup.params.dt, seed, Vec::new())
                    } else {
                        brownian_increments(steps, setup.params.dt, seed)
                    }
                    .and_then(|path| scaling_member(setup, &path));
                    *slot = Some(result);
                }
            });
        }
    });
    let members = members
        .into_iter()
        .map(|m| m.expect("every member is computed"))
        .collect::<Result<Vec<_>>>()?;

    let grid = setup.params.grid;
    let p = setup.gronwall.p;
    let n = members.len() as f64;
    let mut rows = Vec::with_capacity(setup.deltas.len());
    for (j, &delta) in setup.deltas.iter().enumerate() {
        let xi2 = perturbed(&setup.params.noise, setup.perturbation, delta)?;
        let sup_per_seed: Vec<f64> = members.iter().map(|m| m.sups[j]).collect();
        rows.push(ScalingRow {
            delta,
            xi_distance: xi_distance(&setup.params.noise, &xi2, grid)?,
            mean_sup: sup_per_seed.iter().sum::<f64>() / n,
            mean_sup_pow: sup_per_seed.iter().map(|s| s.powf(p)).sum::<f64>() / n,
            sup_per_seed,
        });
    }
    let fit_points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.delta != 0.0 && r.mean_sup > 0.0)
        .map(|r| (r.xi_distance.ln(), r.mean_sup.ln()))
        .collect();
    let (slope, intercept) = fit_line(&fit_points)?;
    let fitted = rows.iter().filter(|r| r.xi_distance > 0.0);
    let fitted_constant = fitted
        .clone()
        .map(|r| r.mean_sup_pow / r.xi_distance.powf(p))
        .fold(0.0, f64::max);
    let gamma: Vec<f64> = members.iter().map(|m| m.gamma).collect();
    let ln_discounted_constant = fitted
        .map(|r| {
            let terms: Vec<f64> = r
                .sup_per_seed
                .iter()
                .zip(&gamma)
                .map(|(s, g)| p * s.ln() - g)
                .collect();
            log_mean_exp(&terms) - p * r.xi_distance.ln()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingStudy {
        rows,
        seeds,
        gamma,
        slope,
        intercept,
        fitted_constant,
        ln_discounted_constant,
        sample_series: members[0].series.clone(),
    })
}

/// Inner products of the energy estimate for `ω̄` at one time, together with
/// their upper bounds evaluated with unit constants.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaTerms {
    pub t: f64,
    /// `|⟨ω̄, ξ¹·∇ω¹ − ξ²·∇ω²⟩|`.
    pub q: f64,
    /// `‖ξ¹·∇ω¹ − ξ²·∇ω²‖₂²`.
    pub a_total: f64,
    /// `⟨ω̄, ξ¹·∇(ξ¹·∇ω¹) − ξ²·∇(ξ²·∇ω²)⟩`.
    pub b_total: f64,
    /// `⟨ω̄, ξ̄·∇(ξ¹·∇ω¹)⟩`.
    pub a: f64,
    /// `⟨ω̄, ξ²·∇(ξ̄·∇ω¹)⟩`.
    pub b: f64,
    /// `⟨ω̄, ξ²·∇(ξ²·∇ω̄)⟩ = −‖ξ²·∇ω̄‖₂²`.
    pub c: f64,
    /// `⟨ω̄, u²·∇ω̄⟩`, zero since `u²` is divergence free.
    pub advection_cross: f64,
    /// `½‖ω̄‖₂² + ½‖ω¹‖²_{k,2}‖ξ̄‖₂²`.
    pub q_bound: f64,
    /// `‖ω̄‖₂² + ‖ω¹‖²_{k,2}‖ξ̄‖₂²`.
    pub a_bound: f64,
    /// `‖ω¹‖²_{k,2}‖ω̄‖₂² + ‖ξ̄‖₂²`.
    pub b_bound: f64,
}

impl LemmaTerms {
    /// `B − (a + b + c)`.
    pub fn decomposition_residual(&self) -> f64 {
        self.b_total - (self.a + self.b + self.c)
    }

    /// Whether each term sits below its unit-constant bound. A `false` entry
    /// means the hidden constant exceeds one, not that the estimate fails.
    pub fn within_unit_bounds(&self) -> [bool; 3] {
        [
            self.q <= self.q_bound,
            self.a_total <= self.a_bound,
            self.b_total.abs() <= self.b_bound,
        ]
    }
}

/// Lemma terms for the pair at snapshot `index`, with noise fields `xi1`, `xi2`
/// and Sobolev order `k` for the bounds.
pub fn lemma_terms(
    pair: &PairedRun,
    xi1: &NoiseModel,
    xi2: &NoiseModel,
    index: usize,
    k: i32,
) -> Result<LemmaTerms> {
    let available = pair.first.len();
    if index >= available {
        return Err(Error::SampleCount {
            requested: index + 1,
            available,
        });
    }
    let grid = pair.first.grid();
    let w1 = &pair.first.snapshots()[index];
    let w2 = &pair.second.snapshots()[index];
    let wbar = w1 - w2;
    let x1: VectorField = xi1.xi(grid)?;
    let x2: VectorField = xi2.xi(grid)?;
    let xbar = x1.sub(&x2)?;

    let t1 = transport(&x1, w1)?;
    let t2 = transport(&x2, w2)?;
    let diff = &t1 - &t2;
    let q = inner(&wbar, &diff)?.abs();
    let a_total = inner(&diff, &diff)?;
    let b_total = inner(&wbar, &(&transport(&x1, &t1)? - &transport(&x2, &t2)?))?;
    let a = inner(&wbar, &transport(&xbar, &t1)?)?;
    let b = inner(&wbar, &transport(&x2, &transport(&xbar, w1)?)?)?;
    let c = inner(&wbar, &transport(&x2, &transport(&x2, &wbar)?)?)?;
    let advection_cross = inner(&wbar, &transport(&biot_savart(w2), &wbar)?)?;

    let wbar_sq = l2_norm(&wbar).powi(2);
    let xbar_sq = xbar.l2_norm().powi(2);
    let sob_sq = sobolev_norm(w1, k)?.powi(2);
    Ok(LemmaTerms {
        t: pair.times()[index],
        q,
        a_total,
        b_total,
        a,
        b,
        c,
        advection_cross,
        q_bound: 0.5 * wbar_sq + 0.5 * sob_sq * xbar_sq,
        a_bound: wbar_sq + sob_sq * xbar_sq,
        b_bound: sob_sq * wbar_sq + xbar_sq,
    })
}
