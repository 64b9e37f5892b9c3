//! Acceptance harness: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Desk scale: `n = 2`, `r_cut = 8`, 32 points per axis and 16 angular nodes
//! unless a criterion states otherwise.  Tolerances are pinned below.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::process::ExitCode;
use std::time::Instant;

use grazing::collision::{
    carleman_k, trilinear_dual, trilinear_sigma, CarlemanRule, CollisionSetup, PerturbedMaxwellian,
    RegularizedB, TrilinearQuadrature,
};
use grazing::evolution::{
    bump_sum, decay_fit, macro_extract, macro_residuals, picard, soft_decay_fit, PicardConfig, State, Stepper, Torus,
};
use grazing::geometry::{bracket, metric_d, norm, norm2, sub, CollisionPair, Vector};
use grazing::kernel::{maxwellian, KernelParams, Regime};
use grazing::linearized::{assemble, assemble_split, gap_dichotomy_scan, AssemblyForm, GapClass, NullBasis};
use grazing::littlewood_paley::{qj_one_decay, square_function, LpBasis};
use grazing::norms::{nsg_norm, sandwich_ratios, Bump, NormConfig, PairRule};
use grazing::quadrature::{integrate_fn, Field, FnField, ScalarField, VelocityGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 2;
const R_CUT: f64 = 8.0;
const PPA: usize = 32;
const PPA_FINE: usize = 48;
const N_THETA: usize = 16;
const SEED: u64 = 20_240_917;

// Pinned tolerances.
const MOMENT_TOL: [f64; 3] = [1e-4, 1e-3, 1e-2];
const KINEMATICS_TOL: f64 = 1e-12;
const REPRESENTATION_TOL: f64 = 0.02;
const B_EPS_MOMENT_TOL: f64 = 1e-10;
const N_IDENTITY_TOL: f64 = 0.01;
const PSD_TOL: f64 = 1e-6;
const NULL_GAP_FACTOR: f64 = 10.0;
/// Eigenvalues below this fraction of the largest one count as near-zero
/// (the weak-form null space carries an O(h^k) discretisation residue).
const NEAR_ZERO_REL: f64 = 1e-3;
const RESOLUTION_STABILITY: f64 = 0.20;
const SANDWICH_BOUNDS: (f64, f64) = (0.25, 4.0);
const SANDWICH_FLAT_SLOPE: f64 = 0.1;
const QJ_SLOPE_MAX: f64 = -1.7;
const CARLEMAN_FLOOR: f64 = 0.1;
const GAP_SLOPE_REL: f64 = 0.25;
const DECAY_RATE_TOL: f64 = 0.05;
const DECAY_R2_MIN: f64 = 0.99;
const SOFT_SLOPE_MAX: f64 = -1.0;
const TRUNCATION_TOL: f64 = 0.01;
const ENTROPY_MU_FACTOR: f64 = 10.0;
const ENTROPY_D_FLOOR: f64 = -1e-8;
const MEANS_TOL: f64 = 1e-8;
const FIRST_ORDER_RATIO: f64 = 1.8;
const PICARD_MATCH_TOL: f64 = 0.02;

type Outcome = grazing::Result<(bool, String)>;

fn desk_grid(ppa: usize) -> VelocityGrid {
    VelocityGrid::new(N, R_CUT, ppa).expect("valid desk grid")
}

fn params(s: f64, gamma: f64) -> KernelParams {
    KernelParams::new(N, s, gamma, 1.0).expect("valid kernel parameters")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    grazing::linearized::linear_fit(x, y).1
}

fn c1_moments() -> Outcome {
    let grid = desk_grid(PPA);
    let m0 = integrate_fn(&grid, |v| maxwellian(v, N));
    let m2 = integrate_fn(&grid, |v| norm2(v) * maxwellian(v, N));
    let m4 = integrate_fn(&grid, |v| norm2(v).powi(2) * maxwellian(v, N));
    let errs = [(m0 - 1.0).abs(), (m2 - 2.0).abs(), (m4 - 8.0).abs()];
    let pass = errs.iter().zip(MOMENT_TOL).all(|(e, t)| *e <= t);
    Ok((pass, format!("<1,mu>={m0:.8} <|v|^2,mu>={m2:.8} <|v|^4,mu>={m4:.8}")))
}

fn c2_kinematics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_cons: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    for _ in 0..10_000 {
        let v = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), 0.0];
        let vs = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), 0.0];
        let a: f64 = rng.gen_range(0.0..2.0 * PI);
        let pair = CollisionPair::new(v, vs, [a.cos(), a.sin(), 0.0])?;
        let scale_p = norm(&v) + norm(&vs);
        let scale_e = norm2(&v) + norm2(&vs);
        for i in 0..N {
            let dp = (v[i] + vs[i] - pair.v_prime[i] - pair.v_star_prime[i]).abs();
            worst_cons = worst_cons.max(dp / scale_p);
        }
        let de = (norm2(&v) + norm2(&vs) - norm2(&pair.v_prime) - norm2(&pair.v_star_prime)).abs();
        worst_cons = worst_cons.max(de / scale_e);
        let back = pair.reversed()?;
        let dv = norm(&sub(&back.v_prime, &v)) + norm(&sub(&back.v_star_prime, &vs));
        worst_inv = worst_inv.max(dv / scale_p);
    }
    let pass = worst_cons <= KINEMATICS_TOL && worst_inv <= KINEMATICS_TOL;
    Ok((pass, format!("conservation {worst_cons:.2e}, involution {worst_inv:.2e} on 1e4 triples")))
}

fn c3_representations() -> Outcome {
    // Five (g, h, f) triples with their (s, ℓ); γ = 0 throughout.
    let suite: [(Bump, Bump, Bump, f64, f64); 5] = [
        (bump([0.5, 0.0], 1.0), bump([-0.3, 0.4], 0.8), bump([0.2, -0.5], 0.9), 0.25, 0.0),
        (bump([0.0, 0.5], 0.9), bump([0.4, -0.2], 1.0), bump([-0.5, 0.1], 0.8), 0.25, 1.0),
        (bump([-0.4, -0.3], 0.8), bump([0.3, 0.3], 0.9), bump([0.1, 0.6], 1.0), 0.4, 0.0),
        (bump([0.3, -0.6], 1.0), bump([-0.5, 0.0], 0.9), bump([0.0, 0.3], 0.8), 0.6, 0.0),
        (bump([0.5, 0.0], 1.0), bump([-0.3, 0.4], 0.8), bump([0.2, -0.5], 0.9), 0.75, 1.0),
    ];
    let outer = VelocityGrid::new(N, 6.0, 24)?;
    let mut pass = true;
    let mut detail = Vec::new();
    let mut worst_moment: f64 = 0.0;
    for (g, h, f, s, ell) in suite {
        let p = params(s, 0.0);
        let q = TrilinearQuadrature::new(outer, s);
        let qf = q.refined(32)?;
        let gap = |q: &TrilinearQuadrature| -> grazing::Result<f64> {
            let a = trilinear_sigma(&g, &h, &f, ell, &p, q)?.value;
            let b = trilinear_dual(&g, &h, &f, ell, &p, q)?.value;
            Ok(rel(a, b))
        };
        let (base, fine) = (gap(&q)?, gap(&qf)?);
        pass &= base <= REPRESENTATION_TOL && fine < base;
        worst_moment = worst_moment.max(RegularizedB::new(p, q.theta_min).moment().abs());
        detail.push(format!("s={s} l={ell}: {:.2}%->{:.2}%", 100.0 * base, 100.0 * fine));
    }
    pass &= worst_moment <= B_EPS_MOMENT_TOL;
    Ok((pass, format!("{}; b_eps moment {worst_moment:.1e}", detail.join(", "))))
}

fn bump(c: [f64; 2], width: f64) -> Bump {
    Bump::new([c[0], c[1], 0.0], width)
}

fn random_bumps(rng: &mut ChaCha8Rng, count: usize, radius: f64) -> Vec<Bump> {
    (0..count)
        .map(|_| {
            let mut b = bump([rng.gen_range(-radius..radius), rng.gen_range(-radius..radius)], rng.gen_range(0.7..1.2));
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

fn c4_n_identity() -> Outcome {
    let grid = desk_grid(PPA);
    let setup = CollisionSetup::standard(params(0.25, 0.0), grid, N_THETA)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut worst: f64 = 0.0;
    for g in random_bumps(&mut rng, 10, 2.0) {
        let lhs = n_form(&setup, &g);
        let nu: f64 = grid.nodes().iter().map(|v| setup.nu_tilde(v) * g.eval(v).powi(2)).sum::<f64>() * grid.cell_volume();
        let rhs = setup.b_seminorm_sq(&g, 0.0) + nu;
        worst = worst.max(rel(lhs, rhs));
    }
    Ok((worst <= N_IDENTITY_TOL, format!("max relative deviation {worst:.2e} over 10 fields")))
}

fn c5_structure() -> Outcome {
    let grid = desk_grid(PPA);
    let setup = CollisionSetup::standard(params(0.25, 0.0), grid, N_THETA)?;
    let l = assemble(&setup, AssemblyForm::Weak)?;
    let ev = l.spectrum().values;
    let scale = ev.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let min = ev[0];
    let near_zero = ev.iter().filter(|x| x.abs() <= NEAR_ZERO_REL * scale).count();
    let gap_ok = ev[N + 2] >= NULL_GAP_FACTOR * ev[N + 1].abs().max(PSD_TOL * scale);
    let pass = min >= -PSD_TOL * scale && near_zero == N + 2 && gap_ok;
    Ok((
        pass,
        format!("min {min:.2e} (scale {scale:.2e}), {near_zero} near-zero, 4th {:.2e}, 5th {:.4}", ev[N + 1], ev[N + 2]),
    ))
}

fn c6_norm_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let suite = random_bumps(&mut rng, 10, 3.0);
    let mut pass = true;
    let mut detail = Vec::new();
    for (s, gamma) in [(0.25, 0.0), (0.3, -2.0)] {
        let p = params(s, gamma);
        let cfg = NormConfig::new(p, 0.0);
        let mut per_res = Vec::new();
        for ppa in [PPA, PPA_FINE] {
            let grid = desk_grid(ppa);
            let setup = CollisionSetup::standard(p, grid, N_THETA)?;
            let mut ratios = Vec::new();
            for g in &suite {
                let nn = nsg_norm(g, &grid, &cfg, &PairRule::default())?;
                ratios.push(n_form(&setup, g) / (nn * nn));
            }
            per_res.push(ratios);
        }
        let all: Vec<f64> = per_res.iter().flatten().copied().collect();
        let (lo, hi) = (all.iter().copied().fold(f64::INFINITY, f64::min), all.iter().copied().fold(0.0, f64::max));
        let drift = per_res[0].iter().zip(&per_res[1]).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
        pass &= lo > 0.0 && drift <= RESOLUTION_STABILITY;
        detail.push(format!("(g={gamma}, s={s}) ratio in [{lo:.3}, {hi:.3}], resolution drift {:.1}%", 100.0 * drift));
    }
    Ok((pass, detail.join("; ")))
}

fn c7_sandwich() -> Outcome {
    let radii = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let p = params(0.3, -2.0);
    let suite: Vec<(String, Bump)> = radii.iter().map(|r| (format!("r={r}"), bump([*r, 0.0], FRAC_1_SQRT_2))).collect();
    let rows = sandwich_ratios(&suite, &desk_grid(PPA), &p, &PairRule::default())?;
    let lower: Vec<f64> = rows.iter().map(|r| r.lower_ratio.unwrap_or(f64::NAN)).collect();
    let upper: Vec<f64> = rows.iter().map(|r| r.upper_ratio.unwrap_or(f64::NAN)).collect();
    let bounded = lower.iter().chain(&upper).all(|x| *x >= SANDWICH_BOUNDS.0 && *x <= SANDWICH_BOUNDS.1);
    // Trends over r ∈ [2, 6]: N/H^s_γ must grow (the first ratio falls like
    // ⟨r⟩^{−s}), N/H^s_{γ+2s} must stay flat.
    let lx: Vec<f64> = radii[2..].iter().map(|r| bracket(&[*r, 0.0, 0.0]).ln()).collect();
    let s_lower = slope(&lx, &lower[2..].iter().map(|x| x.ln()).collect::<Vec<_>>());
    let s_upper = slope(&lx, &upper[2..].iter().map(|x| x.ln()).collect::<Vec<_>>());
    let separated = s_lower <= -0.5 * p.s && s_upper.abs() <= SANDWICH_FLAT_SLOPE;
    Ok((
        bounded && separated,
        format!(
            "H^s_g/N in [{:.3}, {:.3}] slope {s_lower:.3}; N/H^s_g+2s in [{:.3}, {:.3}] slope {s_upper:.3}",
            lower.iter().copied().fold(f64::INFINITY, f64::min),
            lower.iter().copied().fold(0.0, f64::max),
            upper.iter().copied().fold(f64::INFINITY, f64::min),
            upper.iter().copied().fold(0.0, f64::max),
        ),
    ))
}

fn c8_littlewood_paley() -> Outcome {
    let basis = LpBasis::build(2, 1.0 / 16.0, N)?;
    let pts: Vec<Vector> = (0..7).flat_map(|i| (0..7).map(move |j| [-3.0 + i as f64, -3.0 + j as f64, 0.0])).collect();
    let decay = qj_one_decay(&basis, 1..=5, &pts)?;
    let mut ratios = Vec::new();
    for c in [0.0, 2.0, 4.0] {
        let f = bump([c, 0.0], FRAC_1_SQRT_2);
        let mut pair = Vec::new();
        for ppa in [PPA, PPA_FINE] {
            pair.push(square_function(&f, 0.5, 0.25, &basis, 5, &desk_grid(ppa), &PairRule::default())?.ratio);
        }
        ratios.push(pair);
    }
    let drift = ratios.iter().map(|p| rel(p[0], p[1])).fold(0.0, f64::max);
    let flat: Vec<f64> = ratios.iter().flatten().copied().collect();
    let pass = decay.slope <= QJ_SLOPE_MAX && flat.iter().all(|r| *r > 0.0 && r.is_finite()) && drift <= RESOLUTION_STABILITY;
    Ok((
        pass,
        format!(
            "log2 slope {:.2}; square-function ratios {:?}, resolution drift {:.1}%",
            decay.slope,
            flat.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            100.0 * drift
        ),
    ))
}

fn c9_carleman() -> Outcome {
    let p = params(0.25, 0.0);
    let rule = CarlemanRule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let mut ratios = Vec::with_capacity(1000);
    while ratios.len() < 1000 {
        let v = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), 0.0];
        let a: f64 = rng.gen_range(0.0..2.0 * PI);
        let r: f64 = rng.gen_range(0.05..1.0);
        let vp = [v[0] + r * a.cos(), v[1] + r * a.sin(), 0.0];
        if (norm2(&v) - norm2(&vp)).abs() > r {
            continue;
        }
        let k = carleman_k(&v, &vp, &p, &rule)?;
        let d = metric_d(&v, &vp);
        ratios.push(k * d.powf(N as f64 + 2.0 * p.s) / bracket(&vp).powf(p.gamma + 2.0 * p.s + 1.0));
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let below = sorted.iter().filter(|x| **x < CARLEMAN_FLOOR * median).count();
    Ok((below == 0, format!("min/median {:.3}, {below} samples below {CARLEMAN_FLOOR}x median", sorted[0] / median)))
}

fn c10_gap() -> Outcome {
    let base = CollisionSetup::standard(params(0.25, 0.0), desk_grid(PPA), N_THETA)?;
    let rows = gap_dichotomy_scan(&base, &[params(0.25, 0.0), params(0.3, -2.0)], &[2.0, 3.0, 4.0, 5.0, 6.0], FRAC_1_SQRT_2)?;
    let (hard, soft) = (&rows[0], &rows[1]);
    let slope_ok = rel(soft.slope, soft.predicted_slope) <= GAP_SLOPE_REL;
    let pass = hard.classification == GapClass::Gap && soft.classification == GapClass::NoGap && slope_ok;
    Ok((
        pass,
        format!(
            "(0, 1/4) {} slope {:.3}; (-2, 0.3) {} slope {:.3} vs {:.1}",
            hard.classification, hard.slope, soft.classification, soft.slope, soft.predicted_slope
        ),
    ))
}

fn c11_decay() -> Outcome {
    // Hard potential: fitted rate against the smallest positive eigenvalue.
    let grid = desk_grid(PPA);
    let setup = CollisionSetup::standard(params(0.25, 0.0), grid, N_THETA)?;
    let l = assemble(&setup, AssemblyForm::Weak)?;
    let basis = NullBasis::new(grid)?;
    let lc = l.conservative(&basis);
    let ev = lc.spectrum().values;
    let lambda1 = ev[N + 2];
    let dt = 0.02;
    let f0 = basis.project(&bump_sum(&grid, &[([0.7, -0.3, 0.0], 0.8, 1.0), ([-1.0, 0.5, 0.0], 0.6, -0.7)]))?.qg;
    let hist = Stepper::new(&l, dt)?.run(&State::homogeneous(0.0, f0), 1000, false)?;
    let norms: Vec<(f64, f64)> = hist.iter().map(|s| (s.t, s.l2())).collect();
    let hard = decay_fit(&norms, Regime::Hard, (2.0, 20.0))?;
    let hard_ok = rel(hard.rate, lambda1) <= DECAY_RATE_TOL && hard.r_squared >= DECAY_R2_MIN;

    // Soft potential, data with two extra weight orders (w^{-4} tails).
    let ps = params(0.3, -2.0);
    let run_soft = |grid: VelocityGrid| -> grazing::Result<Vec<(f64, f64)>> {
        let setup = CollisionSetup::standard(ps, grid, N_THETA)?;
        let l = assemble(&setup, AssemblyForm::Weak)?;
        let basis = NullBasis::new(grid)?;
        let f0 = basis.project(&grid.sample(|v| (1.0 + 0.3 * v[0] / bracket(v)) * ps.weight_w(v).powi(-4)))?.qg;
        let hist = Stepper::new(&l, 0.1)?.run(&State::homogeneous(0.0, f0), 500, false)?;
        Ok(hist.iter().map(|s| (s.t, s.l2())).collect())
    };
    let reference = run_soft(grid)?;
    // Reduced box with the same mesh width.
    let reduced = run_soft(VelocityGrid::new(N, 6.0, 24)?)?;
    let soft = soft_decay_fit(&reference, &reduced, 1.0, 50.0, TRUNCATION_TOL)?;
    let soft_ok = soft.fit.rate <= SOFT_SLOPE_MAX;
    Ok((
        hard_ok && soft_ok,
        format!(
            "hard rate {:.4} vs lambda1 {lambda1:.4} (R2 {:.5}); soft log-log slope {:.3} on [{:.1}, {:.1}] \
             (truncation onset {}, max deviation {:.2e}, curvature {:.3})",
            hard.rate,
            hard.r_squared,
            soft.fit.rate,
            soft.fit.window.0,
            soft.fit.window.1,
            soft.onset.map_or("none".to_string(), |t| format!("{t:.1}")),
            soft.max_rel_diff,
            soft.fit.curvature
        ),
    ))
}

fn small_setup() -> grazing::Result<CollisionSetup> {
    CollisionSetup::standard(params(0.25, 0.0), VelocityGrid::new(N, 6.0, 24)?, 8)
}

fn small_data(grid: &VelocityGrid, basis: &NullBasis) -> grazing::Result<ScalarField> {
    Ok(basis.project(&bump_sum(grid, &[([0.7, -0.3, 0.0], 0.8, 0.3), ([-1.0, 0.5, 0.0], 0.6, -0.2)]))?.qg)
}

fn c12_entropy() -> Outcome {
    let grid = desk_grid(PPA);
    let setup = CollisionSetup::standard(params(0.25, 0.0), grid, N_THETA)?;
    let mu = FnField(|v: &Vector| maxwellian(v, N));
    let (_, d_mu) = setup.entropy(&mu)?;
    let quad_err = (integrate_fn(&grid, |v| maxwellian(v, N)) - 1.0).abs().max(f64::EPSILON);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 12);
    let mut d_min = f64::INFINITY;
    let mut d_max: f64 = 0.0;
    for _ in 0..10 {
        let bumps = random_bumps(&mut rng, 2, 2.0);
        let amp = 0.4;
        let pert = FnField(move |v: &Vector| amp * bumps.iter().map(|b| b.eval(v)).sum::<f64>() * grazing::kernel::sqrt_maxwellian(v, N));
        let big_f = PerturbedMaxwellian { n: N, f: &pert };
        let (_, d) = setup.entropy(&big_f)?;
        d_min = d_min.min(d);
        d_max = d_max.max(d);
    }
    let mu_ok = d_mu.abs() <= ENTROPY_MU_FACTOR * quad_err * d_max;
    // H(t) along a small nonlinear homogeneous run.
    let setup = small_setup()?;
    let l = assemble(&setup, AssemblyForm::Weak)?;
    let basis = NullBasis::new(setup.grid)?;
    let f0 = small_data(&setup.grid, &basis)?;
    let hist = Stepper::new(&l, 0.05)?.with_collisions(&setup)?.run(&State::homogeneous(0.0, f0), 40, true)?;
    let hs: Vec<f64> = hist.iter().map(|s| s.entropy_h().unwrap_or(f64::NAN)).collect();
    let worst_drop = hs.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let h_ok = hs.iter().all(|h| h.is_finite()) && worst_drop >= 0.0;
    Ok((
        mu_ok && d_min >= ENTROPY_D_FLOOR && h_ok,
        format!(
            "D(mu) {d_mu:.2e} (bound {:.2e}); min D(F) {d_min:.3e}; H {:.6}->{:.6}, smallest increment {worst_drop:.2e}",
            ENTROPY_MU_FACTOR * quad_err * d_max,
            hs[0],
            hs[hs.len() - 1]
        ),
    ))
}

fn c13_macroscopic() -> Outcome {
    let grid = VelocityGrid::new(N, 6.0, 20)?;
    let setup = CollisionSetup::standard(params(0.25, 0.0), grid, 8)?;
    let l = assemble(&setup, AssemblyForm::Weak)?;
    let basis = NullBasis::new(grid)?;
    let mut residuals = Vec::new();
    let mut worst_mean: f64 = 0.0;
    for (dt, nx) in [(0.04f64, 16), (0.02, 32), (0.01, 64)] {
        let torus = Torus::new(nx, 2.0 * PI)?;
        let s0 = State::sample_transport(0.0, torus, grid, |x, v| {
            let m = (-0.25 * norm2(v)).exp();
            m * (0.3 * x.sin() * (1.0 + 0.5 * v[0]) + 0.2 * (2.0 * x).cos() * (norm2(v) - 2.0) + 0.1 * x.cos() * v[0] * v[1])
        });
        let steps = (0.4 / dt).round() as usize;
        let hist = Stepper::new(&l, dt)?.run(&s0, steps, false)?;
        let mut worst: f64 = 0.0;
        for w in hist.windows(2) {
            worst = worst.max(macro_residuals(&w[0], &w[1], &basis)?.max());
        }
        for s in &hist {
            let (a, b, c) = macro_extract(s, &basis)?.means();
            worst_mean = worst_mean.max(a.abs()).max(c.abs()).max(b.iter().fold(0.0, |m, x| m.max(x.abs())));
        }
        residuals.push(worst);
    }
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|r| *r >= FIRST_ORDER_RATIO) && worst_mean <= MEANS_TOL;
    Ok((
        pass,
        format!(
            "residuals {}, halving ratios {}; max |mean(a,b,c)| {worst_mean:.2e}",
            residuals.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>().join(" "),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ")
        ),
    ))
}

fn c14_picard() -> Outcome {
    let setup = small_setup()?;
    let l = assemble(&setup, AssemblyForm::Weak)?;
    let (n_matrix, _) = assemble_split(&setup, &l)?;
    let basis = NullBasis::new(setup.grid)?;
    let f0 = small_data(&setup.grid, &basis)?;
    let cfg = PicardConfig::default();
    let rep = picard(&f0, &cfg, &setup, &l, &n_matrix)?;
    let g0 = rep.iterates[0].g;
    let sup_g = rep.iterates.iter().map(|it| it.g).fold(0.0, f64::max);
    let diffs: Vec<f64> = rep.iterates.iter().skip(1).map(|it| it.diff).collect();
    let contracting = diffs.windows(2).all(|w| w[1] < w[0]) && rep.contraction < 1.0;
    let direct = Stepper::new(&l, cfg.t_star / cfg.steps as f64)?
        .with_collisions(&setup)?
        .run(&State::homogeneous(0.0, f0), cfg.steps, true)?;
    let last = direct.last().expect("non-empty history").slice(0);
    let picard_last = rep.trajectory.last().expect("non-empty trajectory");
    let mismatch = picard_last.lincomb(1.0, &last, -1.0).l2() / last.l2();
    let pass = sup_g.is_finite() && sup_g <= 2.0 * g0 && contracting && mismatch <= PICARD_MATCH_TOL;
    Ok((
        pass,
        format!("sup G {sup_g:.4} (G0 {g0:.4}), contraction {:.3}, mismatch at T* {mismatch:.2e}", rep.contraction),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("1 maxwellian moments", c1_moments),
        ("2 collision kinematics", c2_kinematics),
        ("3 representation equivalence", c3_representations),
        ("4 quadratic-form identity", c4_n_identity),
        ("5 linearized operator structure", c5_structure),
        ("6 norm equivalence", c6_norm_equivalence),
        ("7 sandwich ratios", c7_sandwich),
        ("8 littlewood-paley", c8_littlewood_paley),
        ("9 carleman kernel lower bound", c9_carleman),
        ("10 spectral-gap dichotomy", c10_gap),
        ("11 decay", c11_decay),
        ("12 entropy", c12_entropy),
        ("13 macroscopic diagnostics", c13_macroscopic),
        ("14 picard iteration", c14_picard),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in criteria {
        if let Some(sel) = &only {
            if !name.starts_with(&format!("{sel} ")) {
                continue;
            }
        }
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("[{}] {name}: {detail} ({:.1}s)", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
