//! `validate`: kernel, geometry and quadrature invariant suites.

use std::f64::consts::PI;

use grazing::geometry::{norm, norm2, sub, CollisionPair, Vector};
use grazing::kernel::{m_beta, maxwellian, sqrt_maxwellian, DyadicCutoff, KernelParams};
use grazing::quadrature::{gauss_legendre, integrate_fn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::CheckRow;
use crate::rng;

/// Runs every invariant suite and returns the check rows.
pub fn run(cfg: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
    let params = cfg.kernel.params()?;
    let n = params.n;
    let grid = cfg.grid.grid(n)?;
    let tol = &cfg.tolerances;
    let mut rows = Vec::new();

    let nf = n as f64;
    let moments = [
        ("<1,mu>", integrate_fn(&grid, |v| maxwellian(v, n)), 1.0),
        ("<|v|^2,mu>", integrate_fn(&grid, |v| norm2(v) * maxwellian(v, n)), nf),
        ("<|v|^4,mu>", integrate_fn(&grid, |v| norm2(v).powi(2) * maxwellian(v, n)), nf * (nf + 2.0)),
    ];
    for ((name, value, exact), t) in moments.into_iter().zip(tol.moments) {
        let err = (value - exact).abs();
        rows.push(CheckRow::new("maxwellian-moments", format!("{name} = {exact}"), err, t, err <= t));
    }

    let (cons, inv) = kinematics(&mut rng::seeded(cfg.seed, 2), n, 10_000)?;
    rows.push(CheckRow::new("collision-kinematics", "momentum/energy conservation, 1e4 triples", cons, tol.kinematics, cons <= tol.kinematics));
    rows.push(CheckRow::new("pre-post-involution", "reverse collision recovers (v, v_*)", inv, tol.kinematics, inv <= tol.kinematics));

    rows.push(angular_kernel(&params));

    let mut worst_partition: f64 = 0.0;
    for i in 0..2000 {
        let r = (-12.0 + 24.0 * i as f64 / 1999.0).exp2() * 1.000_123;
        let sum: f64 = (-20..=20).map(|k| DyadicCutoff::chi(k, r)).sum();
        worst_partition = worst_partition.max((sum - 1.0).abs());
    }
    rows.push(CheckRow::new("dyadic-partition", "sum_k chi_k(r) = 1 on r in [2^-12, 2^12]", worst_partition, 0.0, worst_partition == 0.0));

    let mut worst_gl: f64 = 0.0;
    for m in 1..=12usize {
        let (x, w) = gauss_legendre(m);
        let deg = 2 * m - 2;
        let quad: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
        let exact = 2.0 / (deg as f64 + 1.0);
        worst_gl = worst_gl.max((quad - exact).abs());
    }
    rows.push(CheckRow::new("gauss-legendre-exactness", "x^(2m-2) integrated exactly, m = 1..12", worst_gl, 1e-13, worst_gl <= 1e-13));

    let mut worst_fd: f64 = 0.0;
    let mut r = rng::seeded(cfg.seed, 3);
    for _ in 0..200 {
        let v = random_vector(&mut r, n, 3.0);
        let h = 1e-4;
        for i in 0..n {
            let mut beta = vec![0; n];
            beta[i] = 1;
            let mut vp = v;
            let mut vm = v;
            vp[i] += h;
            vm[i] -= h;
            let fd = (sqrt_maxwellian(&vp, n) - sqrt_maxwellian(&vm, n)) / (2.0 * h);
            worst_fd = worst_fd.max((fd - m_beta(&v, n, &beta)?).abs());
        }
    }
    rows.push(CheckRow::new("maxwellian-derivatives", "first derivatives of sqrt(mu) against central differences", worst_fd, 1e-8, worst_fd <= 1e-8));
    Ok(rows)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vector {
    let mut v = [0.0; 3];
    for x in v.iter_mut().take(n) {
        *x = rng.gen_range(-r..r);
    }
    v
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    loop {
        let v = random_vector(rng, n, 1.0);
        let l = norm(&v);
        if l > 0.1 && l <= 1.0 {
            return v.map(|x| x / l);
        }
    }
}

/// Worst relative conservation defect and worst involution defect.
fn kinematics(rng: &mut ChaCha8Rng, n: usize, samples: usize) -> Result<(f64, f64), CliError> {
    let mut cons: f64 = 0.0;
    let mut inv: f64 = 0.0;
    for _ in 0..samples {
        let v = random_vector(rng, n, 6.0);
        let vs = random_vector(rng, n, 6.0);
        let pair = CollisionPair::new(v, vs, random_unit(rng, n))?;
        let sp = norm(&v) + norm(&vs);
        for i in 0..n {
            cons = cons.max((v[i] + vs[i] - pair.v_prime[i] - pair.v_star_prime[i]).abs() / sp);
        }
        let e = norm2(&v) + norm2(&vs);
        cons = cons.max((e - norm2(&pair.v_prime) - norm2(&pair.v_star_prime)).abs() / e);
        let back = pair.reversed()?;
        inv = inv.max((norm(&sub(&back.v_prime, &v)) + norm(&sub(&back.v_star_prime, &vs))) / sp);
    }
    Ok((cons, inv))
}

/// Canonical angular kernel at `θ = π/2` and its vanishing beyond.
fn angular_kernel(p: &KernelParams) -> CheckRow {
    let expected = (PI / 2.0).powf(-1.0 - 2.0 * p.s);
    let at_right_angle = p.angular_b(0.0);
    let beyond = p.angular_b((0.75 * PI).cos());
    let err = (at_right_angle - expected).abs() / expected + beyond.abs();
    CheckRow::new("angular-kernel", "b(pi/2) = (pi/2)^(-1-2s), b = 0 beyond pi/2", err, 1e-12, err <= 1e-12)
}
