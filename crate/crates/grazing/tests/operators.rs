//! Structure of the assembled linearized operator and of the evolution
//! drivers on a small grid.

use std::sync::OnceLock;

use grazing::collision::CollisionSetup;
use grazing::evolution::{
    bump_sum, decay_fit, explicit_dt_bound, picard, PicardConfig, Scheme, State, Stepper, Torus, MIN_FIT_SAMPLES,
};
use grazing::kernel::{sqrt_maxwellian, KernelParams, Regime};
use grazing::linearized::{assemble, assemble_split, linear_fit, AssemblyForm, NullBasis, OperatorMatrix};
use grazing::quadrature::{ScalarField, VelocityGrid};
use grazing::Error;

struct Fixture {
    setup: CollisionSetup,
    basis: NullBasis,
    l: OperatorMatrix,
    n: OperatorMatrix,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let params = KernelParams::new(2, 0.25, 0.0, 1.0).unwrap();
        let grid = VelocityGrid::new(2, 6.0, 14).unwrap();
        let setup = CollisionSetup::standard(params, grid, 6).unwrap();
        let l = assemble(&setup, AssemblyForm::Weak).unwrap();
        let (n, _) = assemble_split(&setup, &l).unwrap();
        Fixture { basis: NullBasis::new(grid).unwrap(), setup, l, n }
    })
}

fn perturbation(fx: &Fixture) -> ScalarField {
    let raw = bump_sum(&fx.setup.grid, &[([0.7, -0.3, 0.0], 0.8, 0.3), ([-1.0, 0.5, 0.0], 0.6, -0.2)]);
    fx.basis.project(&raw).unwrap().qg
}

#[test]
fn conservative_operator_is_symmetric_psd_with_exact_null_space() {
    let fx = fixture();
    let lc = fx.l.conservative(&fx.basis);
    let asym = (&lc.matrix - lc.matrix.transpose()).norm();
    assert!(asym < 1e-12 * lc.matrix.norm());
    let ev = lc.spectrum().values;
    let top = *ev.last().unwrap();
    assert!(ev.windows(2).all(|w| w[0] <= w[1]));
    assert!(ev[0] > -1e-10 * top);
    let zeros = ev.iter().filter(|x| x.abs() <= 1e-10 * top).count();
    assert_eq!(zeros, fx.basis.dim());
    assert!(ev[fx.basis.dim()] > 1e-3 * top);
    for e in &fx.basis.vectors {
        assert!(lc.apply(e).l2() < 1e-10 * top);
    }
}

#[test]
fn projection_reproduces_collision_invariants() {
    let fx = fixture();
    let grid = fx.setup.grid;
    let g = grid.sample(|v| (2.0 - 0.5 * v[1] + 0.25 * (v[0] * v[0] + v[1] * v[1])) * sqrt_maxwellian(v, 2));
    let p = fx.basis.project(&g).unwrap();
    assert!(p.qg.l2() < 1e-10 * g.l2());
    assert!((p.a - 2.0).abs() < 1e-9 && (p.b[1] + 0.5).abs() < 1e-9 && (p.c - 0.25).abs() < 1e-9);
    assert_eq!(fx.basis.dim(), 4);
}

#[test]
fn null_space_data_is_stationary() {
    let fx = fixture();
    let f0 = fx.setup.grid.sample(|v| (1.0 + v[0]) * sqrt_maxwellian(v, 2));
    let stepper = Stepper::new(&fx.l, 0.1).unwrap();
    let hist = stepper.run(&State::homogeneous(0.0, f0.clone()), 20, false).unwrap();
    let last = hist.last().unwrap().slice(0);
    assert!(last.lincomb(1.0, &f0, -1.0).l2() < 1e-10 * f0.l2());
}

#[test]
fn implicit_linear_steps_dissipate_and_match_the_spectral_gap() {
    let fx = fixture();
    let f0 = perturbation(fx);
    let dt = 0.05;
    let hist = Stepper::new(&fx.l, dt).unwrap().run(&State::homogeneous(0.0, f0), 100, false).unwrap();
    let norms: Vec<(f64, f64)> = hist.iter().map(|s| (s.t, s.l2())).collect();
    assert!(norms.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12)));
    let fit = decay_fit(&norms, Regime::Hard, (2.0, 5.0)).unwrap();
    let ev = fx.l.conservative(&fx.basis).spectrum().values;
    let lambda1 = ev[fx.basis.dim()];
    // Implicit Euler damps mode λ by ln(1 + λ dt)/dt.
    let discrete = (1.0 + lambda1 * dt).ln() / dt;
    assert!(fit.rate >= 0.95 * discrete, "rate {} vs {}", fit.rate, discrete);
    assert!(fit.r_squared > 0.99);
}

#[test]
fn explicit_bound_is_two_over_the_top_eigenvalue() {
    let fx = fixture();
    let top = *fx.l.conservative(&fx.basis).spectrum().values.last().unwrap();
    let bound = explicit_dt_bound(&fx.l).unwrap();
    assert!((bound - 2.0 / top).abs() < 1e-12 * bound);
    let f0 = perturbation(fx);
    let stable = Stepper::with_scheme(&fx.l, 0.5 * bound, Scheme::Explicit).unwrap();
    let end = stable.run(&State::homogeneous(0.0, f0.clone()), 40, false).unwrap();
    assert!(end.last().unwrap().l2() < f0.l2());
}

#[test]
fn transport_states_conserve_global_invariants() {
    let fx = fixture();
    let torus = Torus::new(8, 2.0 * std::f64::consts::PI).unwrap();
    let raw = perturbation(fx);
    let slices: Vec<ScalarField> =
        (0..8).map(|i| raw.scaled((2.0 * std::f64::consts::PI * torus.x(i) / torus.length).sin() + 0.5)).collect();
    let s0 = State::transport(0.0, torus, &slices).unwrap();
    let hist = Stepper::new(&fx.l, 0.05).unwrap().run(&s0, 10, false).unwrap();
    let (a, b) = (s0.global_invariants(), hist.last().unwrap().global_invariants());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10, "{x} vs {y}");
    }
    assert!(Torus::new(1, 1.0).is_err());
    assert!(Torus::new(4, 0.0).is_err());
}

#[test]
fn picard_from_zero_data_stays_at_zero() {
    let fx = fixture();
    let f0 = ScalarField::zeros(fx.setup.grid);
    let cfg = PicardConfig { m_max: 2, steps: 4, ..PicardConfig::default() };
    let rep = picard(&f0, &cfg, &fx.setup, &fx.l, &fx.n).unwrap();
    assert!(rep.iterates.iter().all(|it| it.g == 0.0));
    assert!(rep.trajectory.iter().all(|f| f.l2() == 0.0));
}

#[test]
fn decay_fit_recovers_exact_laws() {
    let ts: Vec<f64> = (0..60).map(|k| k as f64 * 0.1).collect();
    let exp: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 3.0 * (-0.7 * t).exp())).collect();
    let fit = decay_fit(&exp, Regime::Hard, (0.0, 10.0)).unwrap();
    assert!((fit.rate - 0.7).abs() < 1e-12 && (fit.r_squared - 1.0).abs() < 1e-12);
    let alg: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (1.0 + t).powf(-1.5))).collect();
    let fit = decay_fit(&alg, Regime::Soft, (0.0, 10.0)).unwrap();
    assert!((fit.rate + 1.5).abs() < 1e-12 && fit.curvature.abs() < 1e-9);
    let flat: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 2.0)).collect();
    assert_eq!(decay_fit(&flat, Regime::Hard, (0.0, 10.0)).unwrap().rate, 0.0);
    let zero: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 0.0)).collect();
    assert_eq!(decay_fit(&zero, Regime::Soft, (0.0, 10.0)).unwrap().rate, 0.0);
    assert!(matches!(decay_fit(&exp[..MIN_FIT_SAMPLES - 1], Regime::Hard, (0.0, 10.0)), Err(Error::Config(_))));
}

#[test]
fn linear_fit_of_an_exact_line() {
    let x = [0.0, 1.0, 2.0, 3.5];
    let y: Vec<f64> = x.iter().map(|x| 1.5 - 2.0 * x).collect();
    let (a, b, r2) = linear_fit(&x, &y);
    assert!((a - 1.5).abs() < 1e-14 && (b + 2.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
}

#[test]
fn picard_config_serde_round_trip_rejects_unknown_fields() {
    let cfg = PicardConfig::default();
    let back: PicardConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(cfg, back);
    assert!(serde_json::from_str::<PicardConfig>(r#"{"t_star":1,"steps":2,"m_max":3,"small_data":1,"bound_factor":2,"tol":0,"x":1}"#).is_err());
}
