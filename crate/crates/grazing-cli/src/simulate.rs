//! `simulate`: linear, nonlinear or Picard runs with energy tracking and a
//! decay fit.

use grazing::collision::CollisionSetup;
use grazing::evolution::{
    decay_fit, energy_track, explicit_dt_bound, picard_traced, DecayFit, PicardIterate, Scheme, State, Stepper, Torus,
};
use grazing::kernel::{sqrt_maxwellian, KernelParams, Regime};
use grazing::linearized::{assemble, assemble_split, AssemblyForm, NullBasis, OperatorMatrix};
use grazing::quadrature::{ScalarField, VelocityGrid};
use rand::Rng;
use serde::Serialize;

use crate::config::{InitialKind, RunConfig, SimMode};
use crate::error::CliError;
use crate::report::Reporter;
use crate::rng;

/// Per-run metadata written to `run.json`.
#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub mode: SimMode,
    pub params: KernelParams,
    pub regime: Regime,
    pub grid: VelocityGrid,
    pub angular_nodes: usize,
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub transport: Option<Torus>,
    pub notes: Vec<String>,
}

/// Decay summary written to `decay.json`.
#[derive(Debug, Serialize)]
pub struct DecaySummary {
    pub regime: Regime,
    /// Hard regime: `λ` of `e^{−λt}`; soft regime: exponent of `(1+t)^p`.
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub unreliable: Option<bool>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    /// Smallest positive eigenvalue of the conservative matrix (hard regime reference).
    pub smallest_positive_eigenvalue: Option<f64>,
    pub initial_norm: f64,
    pub final_norm: f64,
}

#[derive(Debug, Serialize)]
struct PicardSummary<'a> {
    iterates: &'a [PicardIterate],
    contraction: Option<f64>,
    residual: Option<f64>,
    error: Option<String>,
}

/// Seeded initial velocity profile (before projection).
fn raw_profile(cfg: &RunConfig, grid: &VelocityGrid) -> ScalarField {
    let n = grid.n;
    let ini = cfg.simulate.initial;
    match ini.kind {
        InitialKind::Null => grid.sample(|v| (1.0 + v[0]) * sqrt_maxwellian(v, n)),
        InitialKind::Bumps => {
            let mut r = rng::seeded(cfg.seed, 11);
            let bumps: Vec<([f64; 3], f64, f64)> = (0..ini.count)
                .map(|_| {
                    let mut c = [0.0; 3];
                    for x in c.iter_mut().take(n) {
                        *x = r.gen_range(-1.5..1.5);
                    }
                    let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                    (c, r.gen_range(0.6..1.0), sign * ini.amplitude * r.gen_range(0.5..1.0))
                })
                .collect();
            grazing::evolution::bump_sum(grid, &bumps)
        }
    }
}

/// Initial state: homogeneous `(I−P)` profile (or the null profile itself), or
/// in transport mode that profile plus a zero-mean `sin(2πx/L)` modulation of
/// the full profile (conserved data: vanishing spatial means of `a, b, c`).
fn initial_state(cfg: &RunConfig, grid: &VelocityGrid, basis: &NullBasis) -> Result<State, CliError> {
    let raw = raw_profile(cfg, grid);
    let f0 = match cfg.simulate.initial.kind {
        InitialKind::Null => raw.clone(),
        InitialKind::Bumps => basis.project(&raw)?.qg,
    };
    match cfg.simulate.transport {
        None => Ok(State::homogeneous(0.0, f0)),
        Some(t) => {
            let torus = Torus::new(t.points, t.length)?;
            let slices: Vec<ScalarField> = (0..t.points)
                .map(|ix| {
                    let phase = (2.0 * std::f64::consts::PI * torus.x(ix) / t.length).sin();
                    f0.lincomb(1.0, &raw, phase)
                })
                .collect();
            Ok(State::transport(0.0, torus, &slices)?)
        }
    }
}

fn smallest_positive(l: &OperatorMatrix, basis: &NullBasis) -> f64 {
    let ev = l.conservative(basis).spectrum().values;
    let top = ev.last().copied().unwrap_or(0.0).abs();
    ev.into_iter().find(|x| *x > 1e-8 * top).unwrap_or(0.0)
}

pub fn run(cfg: &RunConfig, out: &Reporter) -> Result<(), CliError> {
    let params = cfg.kernel.params()?;
    let grid = cfg.grid.grid(params.n)?;
    let setup = CollisionSetup::standard(params, grid, cfg.grid.angular_nodes)?;
    let sim = &cfg.simulate;
    let l = assemble(&setup, AssemblyForm::Weak)?;
    let (n_matrix, _) = assemble_split(&setup, &l)?;
    let basis = NullBasis::new(grid)?;
    let state0 = initial_state(cfg, &grid, &basis)?;
    let mut notes = Vec::new();
    let (mut dt, mut steps) = (sim.dt, sim.steps);

    if sim.mode != SimMode::Linear {
        let norm0 = state0.l2();
        if norm0 > sim.picard.small_data {
            return Err(CliError::Config(format!(
                "initial norm {norm0:.3e} exceeds the small-data threshold {:.3e} of nonlinear runs",
                sim.picard.small_data
            )));
        }
    }
    if sim.scheme == Scheme::Explicit {
        let bound = explicit_dt_bound(&l)?;
        if dt > 0.9 * bound {
            let t_end = dt * steps as f64;
            let new_dt = 0.9 * bound;
            steps = (t_end / new_dt).ceil() as usize;
            dt = t_end / steps as f64;
            let note = format!(
                "CFL: dt = {:.4e} exceeds the explicit stability bound 2/lambda_max = {bound:.4e}; reduced to dt = {dt:.4e} with {steps} steps (same final time)",
                sim.dt
            );
            eprintln!("warning: {note}");
            notes.push(note);
        }
    }

    let history: Vec<State> = match sim.mode {
        SimMode::Linear | SimMode::Nonlinear => {
            let stepper = Stepper::with_scheme(&l, dt, sim.scheme)?.with_collisions(&setup)?;
            stepper.run(&state0, steps, sim.mode == SimMode::Nonlinear)?
        }
        SimMode::Picard => {
            let mut trace = Vec::new();
            let f0 = state0.slice(0);
            match picard_traced(&f0, &sim.picard, &setup, &l, &n_matrix, |it| trace.push(*it)) {
                Ok(rep) => {
                    out.json(
                        "picard.json",
                        &PicardSummary { iterates: &rep.iterates, contraction: Some(rep.contraction), residual: Some(rep.residual), error: None },
                    )?;
                    dt = sim.picard.t_star / sim.picard.steps as f64;
                    steps = sim.picard.steps;
                    rep.trajectory.into_iter().enumerate().map(|(k, f)| State::homogeneous(k as f64 * dt, f)).collect()
                }
                Err(e @ grazing::Error::Divergence(_)) => {
                    let path = out.json(
                        "picard_divergence.json",
                        &PicardSummary { iterates: &trace, contraction: None, residual: None, error: Some(e.to_string()) },
                    )?;
                    return Err(CliError::Divergence(format!("{e} (G history in {})", path.display())));
                }
                Err(e) => return Err(e.into()),
            }
        }
    };

    let energy = energy_track(&history, sim.ell, &n_matrix, &params)?;
    out.write("trajectory.csv", energy.to_csv().as_bytes())?;

    let norms: Vec<(f64, f64)> = history.iter().map(|s| (s.t, s.l2())).collect();
    let t_end = norms.last().map_or(0.0, |p| p.0);
    let regime = params.regime();
    let window = match (sim.fit_window, regime) {
        (Some([a, b]), _) => (a, b),
        (None, Regime::Hard) => (0.1 * t_end, t_end),
        (None, Regime::Soft) => (1.0f64.min(0.1 * t_end), t_end),
    };
    let (fit, fit_error) = match decay_fit(&norms, regime, window) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = DecaySummary {
        regime,
        rate: fit.as_ref().map(|f| f.rate),
        r_squared: fit.as_ref().map(|f| f.r_squared),
        window: fit.as_ref().map(|f| f.window),
        unreliable: fit.as_ref().map(|f| f.unreliable),
        fit,
        fit_error,
        smallest_positive_eigenvalue: (regime == Regime::Hard).then(|| smallest_positive(&l, &basis)),
        initial_norm: norms.first().map_or(0.0, |p| p.1),
        final_norm: norms.last().map_or(0.0, |p| p.1),
    };
    out.json("decay.json", &summary)?;
    let meta = RunMeta {
        mode: sim.mode,
        params,
        regime,
        grid,
        angular_nodes: cfg.grid.angular_nodes,
        scheme: sim.scheme,
        dt,
        steps,
        seed: cfg.seed,
        transport: state0.torus,
        notes,
    };
    out.json("run.json", &meta)?;
    match (summary.rate, summary.r_squared) {
        (Some(rate), Some(r2)) => println!("simulate: {:?} regime, rate {rate:.6} (R^2 {r2:.5})", regime),
        _ => println!("simulate: {:?} regime, no decay fit ({})", regime, summary.fit_error.as_deref().unwrap_or("")),
    }
    Ok(())
}
