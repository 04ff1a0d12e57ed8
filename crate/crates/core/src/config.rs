//! Plain `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Unknown and repeated keys are
//! errors; missing keys take the defaults listed in [`Config::default`].
//! Lists are separated by `;` (noise wavevectors are written `k1,k2`).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::noise::{NoiseMode, NoiseModel, Wavevector};
use crate::robustness::GronwallParams;
use crate::solver::{Forcing, NoiseScheme, SimParams};

/// Where the simulated data starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitialState {
    /// Terminal state of a weak-noise spin-up run.
    #[default]
    Spinup,
    /// The analytic initial vorticity, without spin-up.
    Formula,
}

impl FromStr for InitialState {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spinup" => Ok(Self::Spinup),
            "formula" => Ok(Self::Formula),
            _ => Err(format!("expected spinup or formula, got {s:?}")),
        }
    }
}

impl std::fmt::Display for InitialState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spinup => "spinup",
            Self::Formula => "formula",
        })
    }
}

impl FromStr for NoiseScheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stratonovich" => Ok(Self::Stratonovich),
            "ito" => Ok(Self::Ito),
            _ => Err(format!("expected stratonovich or ito, got {s:?}")),
        }
    }
}

impl std::fmt::Display for NoiseScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Stratonovich => "stratonovich",
            Self::Ito => "ito",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub grid_n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub damping: f64,
    pub forcing_amplitude: f64,
    pub forcing_wavenumber: i32,
    pub noise: NoiseModel,
    pub seed: u64,
    pub stride: usize,
    pub scheme: NoiseScheme,
    pub advection: bool,
    pub initial: InitialState,
    pub spinup_duration: f64,
    pub spinup_dt: f64,
    pub spinup_alpha: f64,
    /// Sample counts of the convergence study.
    pub n_list: Vec<usize>,
    /// Perturbation sizes of the scaling study, as multiples of `‖ξ¹‖₂`.
    pub delta_list: Vec<f64>,
    pub perturbation_k: Wavevector,
    pub robustness_dt: f64,
    pub robustness_t_end: f64,
    pub robustness_stride: usize,
    pub ensemble: usize,
    pub sobolev_k: i32,
    pub moment_p: f64,
    pub gronwall_c1: f64,
    pub gronwall_c2: f64,
    pub output_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            grid_n: 64,
            dt: 5e-6,
            t_end: 1.0,
            damping: 0.001,
            forcing_amplitude: 0.01,
            forcing_wavenumber: 4,
            noise: NoiseModel::single(Wavevector::new(2, 4), 0.001),
            seed: 1,
            stride: 1,
            scheme: NoiseScheme::Stratonovich,
            advection: true,
            initial: InitialState::Spinup,
            spinup_duration: 10.0,
            spinup_dt: 1e-3,
            spinup_alpha: 1e-6,
            n_list: vec![2500, 5000, 10000, 20000, 40000, 50000, 66667, 100000, 200000],
            delta_list: vec![0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
            perturbation_k: Wavevector::new(3, 1),
            robustness_dt: 1e-3,
            robustness_t_end: 1.0,
            robustness_stride: 10,
            ensemble: 8,
            sobolev_k: 3,
            moment_p: 2.0,
            gronwall_c1: 1.0,
            gronwall_c2: 1.0,
            output_dir: PathBuf::from("output"),
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config {
        line,
        message: format!("{key}: {e}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(';')
        .map(|v| parse_value(line, key, v.trim()))
        .collect()
}

fn parse_wavevector(line: usize, key: &str, value: &str) -> Result<Wavevector> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config {
            line,
            message: format!("{key}: expected k1,k2, got {value:?}"),
        });
    }
    Ok(Wavevector::new(
        parse_value(line, key, parts[0])?,
        parse_value(line, key, parts[1])?,
    ))
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        let mut ks: Option<(usize, Vec<Wavevector>)> = None;
        let mut alphas: Option<(usize, Vec<f64>)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("{key} given more than once"),
                });
            }
            match key {
                "grid_n" => cfg.grid_n = parse_value(line, key, value)?,
                "dt" => cfg.dt = parse_value(line, key, value)?,
                "t_end" => cfg.t_end = parse_value(line, key, value)?,
                "damping" => cfg.damping = parse_value(line, key, value)?,
                "forcing_amplitude" => cfg.forcing_amplitude = parse_value(line, key, value)?,
                "forcing_wavenumber" => cfg.forcing_wavenumber = parse_value(line, key, value)?,
                "k" => {
                    let list = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(';')
                            .map(|v| parse_wavevector(line, key, v.trim()))
                            .collect::<Result<_>>()?
                    };
                    ks = Some((line, list));
                }
                "alpha" => alphas = Some((line, parse_list(line, key, value)?)),
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "stride" => cfg.stride = parse_value(line, key, value)?,
                "scheme" => cfg.scheme = parse_value(line, key, value)?,
                "advection" => cfg.advection = parse_value(line, key, value)?,
                "initial" => cfg.initial = parse_value(line, key, value)?,
                "spinup_duration" => cfg.spinup_duration = parse_value(line, key, value)?,
                "spinup_dt" => cfg.spinup_dt = parse_value(line, key, value)?,
                "spinup_alpha" => cfg.spinup_alpha = parse_value(line, key, value)?,
                "n_list" => cfg.n_list = parse_list(line, key, value)?,
                "delta_list" => cfg.delta_list = parse_list(line, key, value)?,
                "perturbation_k" => cfg.perturbation_k = parse_wavevector(line, key, value)?,
                "robustness_dt" => cfg.robustness_dt = parse_value(line, key, value)?,
                "robustness_t_end" => cfg.robustness_t_end = parse_value(line, key, value)?,
                "robustness_stride" => cfg.robustness_stride = parse_value(line, key, value)?,
                "ensemble" => cfg.ensemble = parse_value(line, key, value)?,
                "sobolev_k" => cfg.sobolev_k = parse_value(line, key, value)?,
                "moment_p" => cfg.moment_p = parse_value(line, key, value)?,
                "gronwall_c1" => cfg.gronwall_c1 = parse_value(line, key, value)?,
                "gronwall_c2" => cfg.gronwall_c2 = parse_value(line, key, value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                _ => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.noise = merge_noise(&cfg.noise, ks, alphas)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Text that parses back to `self`.
    pub fn render(&self) -> String {
        let ks: Vec<String> = self.noise.modes().iter().map(|m| m.k.to_string()).collect();
        let alphas: Vec<f64> = self.noise.modes().iter().map(|m| m.alpha).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("grid_n", self.grid_n.to_string());
        kv("dt", self.dt.to_string());
        kv("t_end", self.t_end.to_string());
        kv("damping", self.damping.to_string());
        kv("forcing_amplitude", self.forcing_amplitude.to_string());
        kv("forcing_wavenumber", self.forcing_wavenumber.to_string());
        kv("k", ks.join(";"));
        kv("alpha", join(&alphas));
        kv("seed", self.seed.to_string());
        kv("stride", self.stride.to_string());
        kv("scheme", self.scheme.to_string());
        kv("advection", self.advection.to_string());
        kv("initial", self.initial.to_string());
        kv("spinup_duration", self.spinup_duration.to_string());
        kv("spinup_dt", self.spinup_dt.to_string());
        kv("spinup_alpha", self.spinup_alpha.to_string());
        kv("n_list", join(&self.n_list));
        kv("delta_list", join(&self.delta_list));
        kv("perturbation_k", self.perturbation_k.to_string());
        kv("robustness_dt", self.robustness_dt.to_string());
        kv("robustness_t_end", self.robustness_t_end.to_string());
        kv("robustness_stride", self.robustness_stride.to_string());
        kv("ensemble", self.ensemble.to_string());
        kv("sobolev_k", self.sobolev_k.to_string());
        kv("moment_p", self.moment_p.to_string());
        kv("gronwall_c1", self.gronwall_c1.to_string());
        kv("gronwall_c2", self.gronwall_c2.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        out
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_n)
    }

    /// Parameters of the data-generating run.
    pub fn sim_params(&self) -> Result<SimParams> {
        Ok(SimParams {
            grid: self.grid()?,
            dt: self.dt,
            t_end: self.t_end,
            damping: self.damping,
            forcing: Forcing {
                amplitude: self.forcing_amplitude,
                wavenumber: self.forcing_wavenumber,
            },
            noise: self.noise.clone(),
            seed: self.seed,
            stride: self.stride,
            advection: self.advection,
            scheme: self.scheme,
        })
    }

    /// Spin-up run: same forcing and damping, weaker noise, coarser step.
    pub fn spinup_params(&self) -> Result<SimParams> {
        let mut p = self.sim_params()?;
        p.dt = self.spinup_dt;
        p.t_end = self.spinup_duration;
        p.noise = self.noise.with_amplitude(self.spinup_alpha);
        p.stride = ((0.1 / self.spinup_dt).round() as usize).max(1);
        p.scheme = NoiseScheme::Stratonovich;
        Ok(p)
    }

    pub fn robustness_params(&self) -> Result<SimParams> {
        let mut p = self.sim_params()?;
        p.dt = self.robustness_dt;
        p.t_end = self.robustness_t_end;
        p.stride = self.robustness_stride;
        Ok(p)
    }

    pub fn gronwall(&self) -> GronwallParams {
        GronwallParams {
            p: self.moment_p,
            k: self.sobolev_k,
            c1: self.gronwall_c1,
            c2: self.gronwall_c2,
        }
    }

    /// Number of increments in the data-generating run.
    pub fn n_full(&self) -> Result<usize> {
        self.sim_params()?.n_steps()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidParameter(m));
        let sim = self.sim_params()?;
        sim.validate()?;
        self.spinup_params()?.validate()?;
        self.robustness_params()?.validate()?;
        let steps = sim.n_steps()?;
        if let Some(&n) = self.n_list.iter().find(|&&n| n == 0 || n > steps) {
            return invalid(format!("n_list entry {n} outside 1..={steps}"));
        }
        if self.delta_list.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return invalid("delta_list entries must be finite and non-negative".into());
        }
        if self.ensemble == 0 {
            return invalid("ensemble must be at least 1".into());
        }
        if self.sobolev_k < 0 {
            return Err(Error::NegativeSobolevOrder(self.sobolev_k));
        }
        if !(self.moment_p >= 1.0) {
            return invalid(format!("moment_p must be at least 1, got {}", self.moment_p));
        }
        crate::noise::basis_stream(self.perturbation_k, sim.grid)?;
        if self.initial == InitialState::Spinup && self.grid_n < 32 {
            return invalid("the spin-up initial state needs grid_n >= 32".into());
        }
        Ok(())
    }
}

fn merge_noise(
    current: &NoiseModel,
    ks: Option<(usize, Vec<Wavevector>)>,
    alphas: Option<(usize, Vec<f64>)>,
) -> Result<NoiseModel> {
    let old_k: Vec<Wavevector> = current.modes().iter().map(|m| m.k).collect();
    let old_a: Vec<f64> = current.modes().iter().map(|m| m.alpha).collect();
    let line = ks
        .as_ref()
        .map(|k| k.0)
        .or(alphas.as_ref().map(|a| a.0))
        .unwrap_or(0);
    let k = ks.map(|k| k.1).unwrap_or(old_k);
    let mut a = alphas.map(|a| a.1).unwrap_or(old_a);
    if a.len() == 1 && k.len() > 1 {
        a = vec![a[0]; k.len()];
    }
    if a.len() != k.len() {
        return Err(Error::Config {
            line,
            message: format!("{} wavevectors but {} amplitudes", k.len(), a.len()),
        });
    }
    Ok(NoiseModel::new(
        k.into_iter()
            .zip(a)
            .map(|(k, alpha)| NoiseMode { k, alpha })
            .collect(),
    ))
}
