//! `verify <task>`: per-module property checks with seeded suites.

use std::f64::consts::FRAC_1_SQRT_2;

use grazing::collision::{trilinear_dual, trilinear_sigma, CollisionSetup, PerturbedMaxwellian, RegularizedB, TrilinearQuadrature};
use grazing::geometry::{bracket, Vector};
use grazing::kernel::{maxwellian, sqrt_maxwellian, KernelParams};
use grazing::linearized::{assemble, coercivity_probe, linear_fit, AssemblyForm, NullBasis};
use grazing::littlewood_paley::{qj_one_decay, square_function, LpBasis};
use grazing::norms::{nsg_norm, sandwich_ratios, Bump, NormConfig, PairRule};
use grazing::quadrature::{integrate_fn, Field, FnField, VelocityGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::CheckRow;
use crate::rng;

/// Verification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Representations,
    Norms,
    Lp,
    Coercivity,
    Entropy,
}

impl Task {
    pub const ALL: [&'static str; 5] = ["representations", "norms", "lp", "coercivity", "entropy"];

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Ok(match name {
            "representations" => Task::Representations,
            "norms" => Task::Norms,
            "lp" => Task::Lp,
            "coercivity" => Task::Coercivity,
            "entropy" => Task::Entropy,
            other => {
                return Err(CliError::Config(format!("unknown task {other:?} (expected one of {})", Self::ALL.join(", "))))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Representations => "representations",
            Task::Norms => "norms",
            Task::Lp => "lp",
            Task::Coercivity => "coercivity",
            Task::Entropy => "entropy",
        }
    }

    pub fn run(self, cfg: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
        match self {
            Task::Representations => representations(cfg),
            Task::Norms => norms(cfg),
            Task::Lp => lp(cfg),
            Task::Coercivity => coercivity(cfg),
            Task::Entropy => entropy(cfg),
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Bump centred in the `(v_1, v_2)` plane.
fn bump(c: [f64; 2], width: f64) -> Bump {
    Bump::new([c[0], c[1], 0.0], width)
}

/// Seeded bumps with centres in `[−radius, radius]^n`, widths in `[0.7, 1.2)`.
fn random_bumps(rng: &mut ChaCha8Rng, n: usize, count: usize, radius: f64) -> Vec<Bump> {
    (0..count)
        .map(|_| {
            let mut c = [0.0; 3];
            for x in c.iter_mut().take(n) {
                *x = rng.gen_range(-radius..radius);
            }
            let mut b = Bump::new(c, rng.gen_range(0.7..1.2));
            b.amplitude = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            b
        })
        .collect()
}

/// `⟨N g, g⟩` with `N g` evaluated at the nodes from the analytic field.
fn n_form(setup: &CollisionSetup, g: &Bump) -> f64 {
    let grid = setup.grid;
    grid.nodes().iter().zip(setup.n_apply(g).values.iter()).map(|(v, n)| n * g.eval(v)).sum::<f64>() * grid.cell_volume()
}

fn finer(points: usize) -> usize {
    points + points / 2
}

fn representations(cfg: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
    let base = cfg.kernel.params()?;
    let n = base.n;
    let tol = cfg.tolerances.representation;
    let outer = VelocityGrid::new(n, cfg.trilinear.r_cut, cfg.trilinear.points)?;
    // (g, h, f) centres and widths with the (s, ℓ) each triple is run at; γ from the config.
    let suite: [([f64; 2], f64, [f64; 2], f64, [f64; 2], f64, f64, f64); 5] = [
        ([0.5, 0.0], 1.0, [-0.3, 0.4], 0.8, [0.2, -0.5], 0.9, base.s, 0.0),
        ([0.0, 0.5], 0.9, [0.4, -0.2], 1.0, [-0.5, 0.1], 0.8, base.s, 1.0),
        ([-0.4, -0.3], 0.8, [0.3, 0.3], 0.9, [0.1, 0.6], 1.0, 0.4, 0.0),
        ([0.3, -0.6], 1.0, [-0.5, 0.0], 0.9, [0.0, 0.3], 0.8, 0.6, 0.0),
        ([0.5, 0.0], 1.0, [-0.3, 0.4], 0.8, [0.2, -0.5], 0.9, 0.75, 1.0),
    ];
    let mut rows = Vec::new();
    let mut worst_moment: f64 = 0.0;
    for (i, (cg, wg, ch, wh, cf, wf, s, ell)) in suite.into_iter().enumerate() {
        let p = KernelParams::new(n, s, base.gamma, base.c_phi)?;
        let (g, h, f) = (bump(cg, wg), bump(ch, wh), bump(cf, wf));
        let q = TrilinearQuadrature::new(outer, s);
        let qf = q.refined(cfg.trilinear.refined_points)?;
        let gap = |q: &TrilinearQuadrature| -> Result<(f64, f64, f64), CliError> {
            let a = trilinear_sigma(&g, &h, &f, ell, &p, q)?.value;
            let b = trilinear_dual(&g, &h, &f, ell, &p, q)?.value;
            Ok((a, b, rel(a, b)))
        };
        let (sigma, dual, base_gap) = gap(&q)?;
        let (_, _, fine_gap) = gap(&qf)?;
        rows.push(CheckRow::new(
            "dual-representation",
            format!("triple {i} (s={s}, l={ell}): sigma {sigma:.6e}, dual {dual:.6e}, relative gap"),
            base_gap,
            tol,
            base_gap <= tol,
        ));
        rows.push(CheckRow::new(
            "dual-representation",
            format!("triple {i}: refined gap below baseline {base_gap:.3e}"),
            fine_gap,
            base_gap,
            fine_gap < base_gap,
        ));
        worst_moment = worst_moment.max(RegularizedB::new(p, q.theta_min).moment().abs());
    }
    let t = cfg.tolerances.b_eps_moment;
    rows.push(CheckRow::new("regularized-kernel-moment", "mean-zero regularised angular kernel", worst_moment, t, worst_moment <= t));
    Ok(rows)
}

fn norms(cfg: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
    let params = cfg.kernel.params()?;
    let n = params.n;
    let tol = &cfg.tolerances;
    let suite = random_bumps(&mut rng::seeded(cfg.seed, 6), n, 10, 3.0);
    let norm_cfg = NormConfig::new(params, 0.0);
    let rule = PairRule::default();
    let mut rows = Vec::new();

    let grid = cfg.grid.grid(n)?;
    let setup = CollisionSetup::standard(params, grid, cfg.grid.angular_nodes)?;
    let fine_grid = cfg.grid.grid_with(n, finer(cfg.grid.points_per_axis))?;
    let fine_setup = CollisionSetup::standard(params, fine_grid, cfg.grid.angular_nodes)?;
    for (i, g) in suite.iter().enumerate() {
        let lhs = n_form(&setup, g);
        let nu: f64 = grid.nodes().iter().map(|v| setup.nu_tilde(v) * g.eval(v).powi(2)).sum::<f64>() * grid.cell_volume();
        let dev = rel(lhs, setup.b_seminorm_sq(g, 0.0) + nu);
        rows.push(CheckRow::new("quadratic-form-identity", format!("bump {i}: <Ng,g> = |g|_B^2 + int nu g^2"), dev, tol.n_identity, dev <= tol.n_identity));
        let nn = nsg_norm(g, &grid, &norm_cfg, &rule)?;
        let nf = nsg_norm(g, &fine_grid, &norm_cfg, &rule)?;
        let (r0, r1) = (lhs / (nn * nn), n_form(&fine_setup, g) / (nf * nf));
        let drift = rel(r0, r1);
        rows.push(CheckRow::new("norm-equivalence", format!("bump {i}: <Ng,g>/|g|_N^2 = {r0:.4} (positive)"), r0, 0.0, r0 > 0.0));
        rows.push(CheckRow::new(
            "norm-equivalence",
            format!("bump {i}: resolution drift of the ratio ({r1:.4} on the finer grid)"),
            drift,
            tol.resolution_stability,
            drift <= tol.resolution_stability,
        ));
    }

    let radii = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let outward: Vec<(String, Bump)> =
        radii.iter().map(|r| (format!("r={r}"), bump([*r, 0.0], FRAC_1_SQRT_2))).collect();
    let table = sandwich_ratios(&outward, &grid, &params, &rule)?;
    for row in &table {
        let lo = row.lower_ratio.unwrap_or(f64::NAN);
        let up = row.upper_ratio.unwrap_or(f64::NAN);
        rows.push(CheckRow::new("sandwich-lower", format!("{}: |g|_Hs_gamma / |g|_N", row.label), lo, 4.0, lo > 0.25 && lo < 4.0));
        rows.push(CheckRow::new("sandwich-upper", format!("{}: |g|_N / |g|_Hs_gamma+2s", row.label), up, 4.0, up > 0.25 && up < 4.0));
    }
    let lx: Vec<f64> = radii[2..].iter().map(|r| bracket(&[*r, 0.0, 0.0]).ln()).collect();
    let ly: Vec<f64> = table[2..].iter().map(|r| r.upper_ratio.unwrap_or(f64::NAN).ln()).collect();
    let slope = linear_fit(&lx, &ly).1;
    rows.push(CheckRow::new("sandwich-upper", "log-log trend of the upper ratio over r in [2, 6] (flat)", slope, 0.1, slope.abs() <= 0.1));
    Ok(rows)
}

fn lp(cfg: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
    let params = cfg.kernel.params()?;
    let n = params.n;
    let basis = LpBasis::build(cfg.lp.m, cfg.lp.r, n)?;
    let pts: Vec<Vector> = if n == 2 {
        (0..7).flat_map(|i| (0..7).map(move |j| [-3.0 + i as f64, -3.0 + j as f64, 0.0])).collect()
    } else {
        (0..5).flat_map(|i| (0..5).flat_map(move |j| (0..5).map(move |k| [-2.0 + i as f64, -2.0 + j as f64, -2.0 + k as f64]))).collect()
    };
    let decay = qj_one_decay(&basis, 1..=cfg.lp.j_max, &pts)?;
    let mut rows: Vec<CheckRow> = decay
        .j
        .iter()
        .zip(&decay.sup)
        .map(|(j, s)| CheckRow::new("lp-qj-decay", format!("sup |Q_{j}(1)|"), *s, f64::NAN, s.is_finite()))
        .collect();
    let t = cfg.tolerances.qj_slope_max;
    rows.push(CheckRow::new("lp-qj-decay", format!("fitted log2 slope over j = 1..{}", cfg.lp.j_max), decay.slope, t, decay.slope <= t));

    let rho = params.gamma + 2.0 * params.s;
    let grid = cfg.grid.grid(n)?;
    let fine = cfg.grid.grid_with(n, finer(cfg.grid.points_per_axis))?;
    for c in [0.0, 2.0, 4.0] {
        let f = bump([c, 0.0], FRAC_1_SQRT_2);
        let a = square_function(&f, rho, params.s, &basis, cfg.lp.j_max, &grid, &PairRule::default())?.ratio;
        let b = square_function(&f, rho, params.s, &basis, cfg.lp.j_max, &fine, &PairRule::default())?.ratio;
        let drift = rel(a, b);
        let tol = cfg.tolerances.resolution_stability;
        rows.push(CheckRow::new("lp-square-function", format!("bump at r={c}: square function / norm = {a:.4}"), a, 0.0, a > 0.0 && a.is_finite()));
        rows.push(CheckRow::new("lp-square-function", format!("bump at r={c}: resolution drift ({b:.4} on the finer grid)"), drift, tol, drift <= tol));
    }
    Ok(rows)
}

fn coercivity(cfg: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
    let params = cfg.kernel.params()?;
    let n = params.n;
    let grid = cfg.grid.grid(n)?;
    let setup = CollisionSetup::standard(params, grid, cfg.grid.angular_nodes)?;
    let l = assemble(&setup, AssemblyForm::Weak)?;
    let basis = NullBasis::new(grid)?;
    let suite: Vec<_> = random_bumps(&mut rng::seeded(cfg.seed, 7), n, 10, 3.0).iter().map(|b| grid.sample(|v| b.eval(v))).collect();
    let report = coercivity_probe(&l, &basis, &suite, &params, &PairRule::default(), 1e-8)?;
    let mut rows: Vec<CheckRow> = report
        .ratios
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v = r.unwrap_or(f64::NAN);
            CheckRow::new("coercivity", format!("bump {i}: <Lg,g> / |(I-P)g|_N^2"), v, 0.0, r.map_or(true, |x| x > 0.0))
        })
        .collect();
    rows.push(CheckRow::new("coercivity", format!("delta0 (upper constant {:.4})", report.c_upper), report.delta0, 0.0, report.delta0 > 0.0));
    Ok(rows)
}

fn entropy(cfg: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
    let params = cfg.kernel.params()?;
    let n = params.n;
    let grid = cfg.grid.grid(n)?;
    let setup = CollisionSetup::standard(params, grid, cfg.grid.angular_nodes)?;
    let tol = &cfg.tolerances;
    let mut rows = Vec::new();
    let mut d_max: f64 = 0.0;
    let mut rng = rng::seeded(cfg.seed, 12);
    for i in 0..10 {
        let bumps = random_bumps(&mut rng, n, 2, 2.0);
        let pert = FnField(move |v: &Vector| 0.4 * bumps.iter().map(|b| b.eval(v)).sum::<f64>() * sqrt_maxwellian(v, n));
        let (_, d) = setup.entropy(&PerturbedMaxwellian { n, f: &pert })?;
        d_max = d_max.max(d);
        rows.push(CheckRow::new("entropy-production-sign", format!("perturbation {i}: D(F)"), d, tol.entropy_floor, d >= tol.entropy_floor));
    }
    let (_, d_mu) = setup.entropy(&FnField(|v: &Vector| maxwellian(v, n)))?;
    let quad_err = (integrate_fn(&grid, |v| maxwellian(v, n)) - 1.0).abs().max(f64::EPSILON);
    let bound = tol.entropy_mu_factor * quad_err * d_max;
    rows.push(CheckRow::new("entropy-production-equilibrium", "D(mu) within the quadrature error", d_mu.abs(), bound, d_mu.abs() <= bound));
    Ok(rows)
}
