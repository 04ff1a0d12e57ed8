use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _};
use log::{info, warn};
use saltcal_core::calibration::{
    correlation, ConvergenceStudy, EnergyQvAccumulator, GramAccumulator,
};
use saltcal_core::config::InitialState;
use saltcal_core::field::{kinetic_energy, mean};
use saltcal_core::robustness::{
    lemma_terms, paired_simulate, perturbed, scaling_study, ScalingSetup,
};
use saltcal_core::solver::{
    brownian_path_for, initial_condition, simulate_into, spin_up, SnapshotSink,
};
use saltcal_core::trajectory_io::{TrajectoryReader, TrajectoryWriter};
use saltcal_core::{Config, ScalarField, SimParams, Trajectory, TrajectoryMeta};

use crate::output::{field_csv, join, nums, require, write_atomic, KeyValue, Num};

pub const INITIAL_STATE: &str = "initial_state.sltv";
pub const TRAJECTORY: &str = "trajectory.sltv";

/// Files the `report` command knows how to summarise, in pipeline order.
const ARTIFACTS: &[&str] = &[
    "config.txt",
    INITIAL_STATE,
    "initial_state.csv",
    "spinup_energy.csv",
    TRAJECTORY,
    "timeseries.csv",
    "calibration.txt",
    "convergence.csv",
    "qv_field.csv",
    "b_field.csv",
    "pointwise_alpha.csv",
    "robustness.csv",
    "distance.csv",
    "lemma.csv",
    "robustness.txt",
];

pub struct Context {
    pub config: Config,
    pub out: PathBuf,
}

impl Context {
    pub fn load(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<Self> {
        let mut cfg = match config {
            Some(path) => {
                require(path, "configuration file not found")?;
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Config::parse(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Config::default(),
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        let out = out.unwrap_or_else(|| cfg.output_dir.clone());
        Ok(Self { config: cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        write_atomic(&self.path("config.txt"), &self.config.render())
    }

    /// Starting vorticity for `simulate` and `robustness`.
    fn initial_state(&self) -> anyhow::Result<ScalarField> {
        match self.config.initial {
            InitialState::Formula => Ok(initial_condition(self.config.grid()?)?),
            InitialState::Spinup => {
                let path = self.path(INITIAL_STATE);
                require(&path, "run `saltcal spinup` first or set initial = formula")?;
                let mut reader = TrajectoryReader::open(&path)?;
                let (_, state) = reader
                    .next_record()?
                    .with_context(|| format!("{} holds no state", path.display()))?;
                if state.grid() != self.config.grid()? {
                    bail!(
                        "{} is on a {}² grid but the config asks for {}²",
                        path.display(),
                        state.grid().n(),
                        self.config.grid_n
                    );
                }
                Ok(state)
            }
        }
    }
}

pub fn spinup(ctx: &Context) -> anyhow::Result<()> {
    ctx.prepare()?;
    let params = ctx.config.spinup_params()?;
    info!(
        "spin-up over {} time units at dt = {} with alpha = {}",
        params.t_end, params.dt, ctx.config.spinup_alpha
    );
    let start = Instant::now();
    let result = spin_up(&params)?;
    info!("spin-up done in {:.1?}", start.elapsed());

    let mut traj = Trajectory::new(TrajectoryMeta::from(&params));
    traj.push(params.t_end, result.state.clone())?;
    saltcal_core::write_trajectory(&traj, ctx.path(INITIAL_STATE))?;
    write_atomic(&ctx.path("initial_state.csv"), &field_csv(&result.state))?;
    let mut csv = String::from("t,energy,mean\n");
    for (t, e, m) in &result.history {
        csv.push_str(&format!("{t},{e:e},{m:e}\n"));
    }
    write_atomic(&ctx.path("spinup_energy.csv"), &csv)?;
    Ok(())
}

/// Energy and mean vorticity at roughly a thousand evenly spaced snapshots.
struct TimeSeries {
    every: usize,
    seen: usize,
    rows: Vec<(f64, f64, f64)>,
}

impl SnapshotSink for TimeSeries {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> saltcal_core::Result<()> {
        if self.seen.is_multiple_of(self.every) {
            self.rows.push((t, kinetic_energy(omega), mean(omega)));
        }
        self.seen += 1;
        Ok(())
    }
}

fn run_params(ctx: &Context) -> anyhow::Result<SimParams> {
    let p = ctx.config.sim_params()?;
    p.validate()?;
    Ok(p)
}

pub fn simulate(ctx: &Context) -> anyhow::Result<()> {
    let params = run_params(ctx)?;
    let omega0 = ctx.initial_state()?;
    ctx.prepare()?;
    let steps = params.n_steps()?;
    info!(
        "simulating {steps} steps of dt = {} on a {}² grid, recording every {} step(s)",
        params.dt,
        params.grid.n(),
        params.stride
    );
    let start = Instant::now();
    let writer = TrajectoryWriter::create(ctx.path(TRAJECTORY), &TrajectoryMeta::from(&params))?;
    let records = steps / params.stride + 1 + usize::from(steps % params.stride != 0);
    let series = TimeSeries {
        every: (records / 1000).max(1),
        seen: 0,
        rows: Vec::new(),
    };
    let mut sinks = (writer, series);
    simulate_into(&omega0, &params, &brownian_path_for(&params)?, &mut sinks)?;
    let (writer, series) = sinks;
    let count = writer.count();
    writer.finish()?;
    info!("wrote {count} snapshots in {:.1?}", start.elapsed());

    let mut csv = String::from("t,energy,mean\n");
    for (t, e, m) in &series.rows {
        csv.push_str(&format!("{t},{e:e},{m:e}\n"));
    }
    write_atomic(&ctx.path("timeseries.csv"), &csv)?;
    Ok(())
}

pub fn calibrate(ctx: &Context, energy_route: bool, pointwise: bool) -> anyhow::Result<()> {
    let path = ctx.path(TRAJECTORY);
    require(&path, "run `saltcal simulate` first")?;
    let mut reader = TrajectoryReader::open(&path)?;
    let meta = reader.meta().clone();
    let count = reader.count() as usize;
    if count < 2 {
        bail!("{} holds {count} snapshot(s); at least 2 are needed", path.display());
    }
    let (k, alpha_true) = match meta.noise.modes().first() {
        Some(m) => (m.k, (m.alpha != 0.0).then_some(m.alpha)),
        None => match ctx.config.noise.modes().first() {
            Some(m) => (m.k, None),
            None => bail!("no noise wavevector in {} or in the config", path.display()),
        },
    };
    if meta.noise.modes().len() > 1 {
        warn!("trajectory has {} noise modes; calibrating the first, k = {k}", meta.noise.modes().len());
    }
    let total = count - 1;
    let mut n_list: Vec<usize> = ctx.config.n_list.iter().copied().filter(|&n| n <= total).collect();
    if n_list.len() < ctx.config.n_list.len() {
        warn!("dropping n_list entries above the {total} available increments");
    }
    if !n_list.contains(&total) {
        n_list.push(total);
    }
    n_list.sort_unstable();
    n_list.dedup();
    info!("calibrating k = {k} from {count} snapshots of {}", path.display());

    let start = Instant::now();
    let study = ConvergenceStudy::new(meta.grid, k, total, &n_list, alpha_true)?;
    let mut energy = EnergyQvAccumulator::new();
    let mut gram = if energy_route {
        Some(GramAccumulator::new(meta.grid, &[k])?)
    } else {
        None
    };
    let mut sinks = (study, EnergyRoute { energy: &mut energy, gram: gram.as_mut() });
    reader.replay(&mut sinks)?;
    let (study, _) = sinks;
    let rows = study.finish()?;
    info!("calibration pass done in {:.1?}", start.elapsed());

    let dense = study.densest().expect("n_list is non-empty");
    let full = &rows.last().expect("n_list is non-empty").result;
    let qv = dense.qv_field()?.field;
    let be = dense.weighted_b_field()?;

    let mut kv = KeyValue::default();
    kv.put("trajectory", path.display())
        .put("k", k)
        .put("alpha_hat", Num(full.alpha_hat))
        .put("alpha_true", alpha_true.map_or("unknown".into(), |a| Num(a).to_string()))
        .put("relative_error", full.relative_error.map_or("unknown".into(), |e| Num(e).to_string()))
        .put("samples", full.samples)
        .put("horizon", Num(full.horizon))
        .put("qv_integral", Num(full.qv_integral))
        .put("b_integral", Num(full.b_integral))
        .put("gram", Num(full.gram[(0, 0)]))
        .put("eigenvalues", nums(&full.eigenvalues))
        .put("alpha_tilde", nums(&full.alpha_tilde))
        .put("qv_profile_correlation", Num(correlation(&qv, &be)?));
    let energy_qv = energy.finish()?;
    kv.put("energy_qv", Num(energy_qv));
    if let Some(gram) = &gram {
        let a = gram.finish()?;
        let d = saltcal_core::calibration::diagonalize_solve(&a, energy_qv)?;
        let alpha_sq = d.alpha_tilde_sq.unwrap_or(f64::NAN);
        kv.put("energy_gram", Num(a[(0, 0)]))
            .put("energy_alpha_hat", Num(alpha_sq.max(0.0).sqrt()))
            .put("energy_residual", Num(d.residual(&[alpha_sq.max(0.0).sqrt()])));
    }
    write_atomic(&ctx.path("calibration.txt"), kv.text())?;

    let mut csv = String::from("N,alpha_hat,relative_error\n");
    for r in &rows {
        let err = r.relative_error.map_or(String::new(), |e| Num(e).to_string());
        csv.push_str(&format!("{},{},{}\n", r.n, r.alpha_hat, err));
    }
    write_atomic(&ctx.path("convergence.csv"), &csv)?;
    write_atomic(&ctx.path("qv_field.csv"), &field_csv(&qv))?;
    write_atomic(&ctx.path("b_field.csv"), &field_csv(&be))?;
    if pointwise {
        write_atomic(&ctx.path("pointwise_alpha.csv"), &field_csv(&dense.pointwise_alpha_sq()?.map(f64::sqrt)))?;
    }
    println!("{}", kv.text().trim_end());
    Ok(())
}

struct EnergyRoute<'a> {
    energy: &'a mut EnergyQvAccumulator,
    gram: Option<&'a mut GramAccumulator>,
}

impl SnapshotSink for EnergyRoute<'_> {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> saltcal_core::Result<()> {
        self.energy.observe(t, omega)?;
        if let Some(g) = self.gram.as_mut() {
            g.observe(t, omega)?;
        }
        Ok(())
    }
}

pub fn robustness(ctx: &Context) -> anyhow::Result<()> {
    let cfg = &ctx.config;
    let params = cfg.robustness_params()?;
    let omega0 = ctx.initial_state()?;
    ctx.prepare()?;
    let norm = params.noise.xi(params.grid)?.l2_norm();
    let deltas: Vec<f64> = cfg.delta_list.iter().map(|d| d * norm).collect();
    info!(
        "scaling study: {} perturbation sizes, ensemble of {}, {} steps each",
        deltas.len(),
        cfg.ensemble,
        params.n_steps()?
    );
    let start = Instant::now();
    let study = scaling_study(&ScalingSetup {
        params: params.clone(),
        initial: omega0.clone(),
        perturbation: cfg.perturbation_k,
        deltas: deltas.clone(),
        ensemble: cfg.ensemble,
        gronwall: cfg.gronwall(),
    })?;
    info!("scaling study done in {:.1?}", start.elapsed());

    let mut csv = format!(
        "delta,xi_distance,mean_sup,mean_sup_pow,{}\n",
        join(study.seeds.iter().map(|s| format!("sup_seed_{s}")), ",")
    );
    for r in &study.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.delta,
            r.xi_distance,
            r.mean_sup,
            r.mean_sup_pow,
            join(&r.sup_per_seed, ",")
        ));
    }
    write_atomic(&ctx.path("robustness.csv"), &csv)?;
    let mut series = String::from("t,distance\n");
    for (t, d) in &study.sample_series {
        series.push_str(&format!("{t},{d:e}\n"));
    }
    write_atomic(&ctx.path("distance.csv"), &series)?;

    let largest = deltas.iter().copied().fold(0.0, f64::max);
    let xi2 = perturbed(&params.noise, cfg.perturbation_k, largest)?;
    let pair = paired_simulate(&omega0, &omega0, &params.noise, &xi2, &params)?;
    let mut lemma = String::from("t,Q,A,B,a,b,c,advection_cross,Q_bound,A_bound,B_bound\n");
    let (mut worst_c, mut worst_split, mut flagged) = (f64::NEG_INFINITY, 0.0f64, 0usize);
    for i in 0..pair.first.len() {
        let t = lemma_terms(&pair, &params.noise, &xi2, i, cfg.sobolev_k)?;
        worst_c = worst_c.max(t.c);
        worst_split = worst_split.max(t.decomposition_residual().abs());
        flagged += t.within_unit_bounds().iter().filter(|ok| !**ok).count();
        lemma.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            t.t, t.q, t.a_total, t.b_total, t.a, t.b, t.c, t.advection_cross, t.q_bound, t.a_bound, t.b_bound
        ));
    }
    write_atomic(&ctx.path("lemma.csv"), &lemma)?;
    if flagged > 0 {
        warn!("{flagged} lemma terms exceed their unit-constant bounds; the hidden constants are larger than one");
    }

    let mut kv = KeyValue::default();
    kv.put("perturbation_k", cfg.perturbation_k)
        .put("xi_norm", Num(norm))
        .put("ensemble", cfg.ensemble)
        .put("seeds", join(&study.seeds, ";"))
        .put("slope", Num(study.slope))
        .put("intercept", Num(study.intercept))
        .put("fitted_constant", Num(study.fitted_constant))
        .put("ln_discounted_constant", Num(study.ln_discounted_constant))
        .put("gamma", nums(&study.gamma))
        .put("max_c", Num(worst_c))
        .put("max_decomposition_residual", Num(worst_split))
        .put("unit_bound_exceedances", flagged);
    write_atomic(&ctx.path("robustness.txt"), kv.text())?;
    println!("{}", kv.text().trim_end());
    Ok(())
}

fn summarize(path: &Path, name: &str) -> anyhow::Result<String> {
    let text = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    Ok(match name {
        INITIAL_STATE | TRAJECTORY => {
            let r = TrajectoryReader::open(path)?;
            let m = r.meta();
            format!(
                "{} snapshot(s) on {}², dt = {}, seed = {}, noise modes [{}]",
                r.count(),
                m.grid.n(),
                m.dt,
                m.seed,
                join(m.noise.modes().iter().map(|md| format!("k={} alpha={}", md.k, md.alpha)), "; ")
            )
        }
        "calibration.txt" | "robustness.txt" | "config.txt" => {
            let body = text(path)?;
            let lines: Vec<String> = body.lines().map(|l| format!("    {l}")).collect();
            format!("\n{}", lines.join("\n"))
        }
        "convergence.csv" => {
            let body = text(path)?;
            let rows: Vec<String> = body
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    (f.len() == 3).then(|| format!("N={} err={}", f[0], f[2]))
                })
                .collect();
            rows.join(", ")
        }
        _ => {
            let body = text(path)?;
            format!("{} line(s)", body.lines().count())
        }
    })
}

pub fn report(ctx: &Context) -> anyhow::Result<()> {
    let mut lines = Vec::new();
    for name in ARTIFACTS {
        let path = ctx.path(name);
        if path.is_file() {
            lines.push(format!("{name}: {}", summarize(&path, name)?));
        }
    }
    if lines.is_empty() {
        warn!("empty report: no artifacts in {}", ctx.out.display());
        return Ok(());
    }
    let text = format!("report for {}\n{}\n", ctx.out.display(), lines.join("\n"));
    write_atomic(&ctx.path("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
