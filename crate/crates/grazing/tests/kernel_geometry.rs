//! Closed-form oracles for the kernel family, the Maxwellian and the collision
//! geometry.

use std::f64::consts::{FRAC_PI_2, PI};

use grazing::geometry::{
    dot, jacobian_zeta_shift, jacobian_zeta_shift_n, norm, post_collisional, sub, CollisionPair, Vector,
};
use grazing::kernel::{m_beta, maxwellian, sqrt_maxwellian, DyadicCutoff, KernelParams, Regime};
use grazing::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(v: Vector) -> Vector {
    let r = norm(&v);
    [v[0] / r, v[1] / r, v[2] / r]
}

#[test]
fn inverse_power_parametrisation() {
    let hard_sphere_like = KernelParams::from_inverse_power(5.0, 3).unwrap();
    assert_eq!((hard_sphere_like.gamma, hard_sphere_like.s), (0.0, 0.25));
    let coulomb_adjacent = KernelParams::from_inverse_power(3.0, 3).unwrap();
    assert_eq!((coulomb_adjacent.gamma, coulomb_adjacent.s), (-1.0, 0.5));
    let seven = KernelParams::from_inverse_power(7.0, 3).unwrap();
    assert!((seven.gamma - 1.0 / 3.0).abs() < 1e-15 && (seven.s - 1.0 / 6.0).abs() < 1e-15);
    let err = KernelParams::from_inverse_power(2.0, 3).unwrap_err();
    assert!(matches!(&err, Error::Domain(m) if m.contains("not well defined")));
    assert!(KernelParams::from_inverse_power(1.5, 3).is_err());
}

#[test]
fn parameter_domain_is_enforced() {
    assert!(KernelParams::new(3, 0.0, 0.0, 1.0).is_err());
    assert!(KernelParams::new(3, 1.0, 0.0, 1.0).is_err());
    assert!(KernelParams::new(3, 0.5, -3.5, 1.0).is_err());
    assert!(KernelParams::new(4, 0.5, 0.0, 1.0).is_err());
    assert!(KernelParams::new(2, 0.5, 0.0, 0.0).is_err());
    assert!(KernelParams::new(2, 0.3, -2.0, 1.0).is_ok());
}

#[test]
fn regime_follows_gamma_plus_two_s() {
    assert_eq!(KernelParams::new(3, 0.25, 0.0, 1.0).unwrap().regime(), Regime::Hard);
    assert_eq!(KernelParams::new(3, 0.5, -1.0, 1.0).unwrap().regime(), Regime::Hard);
    assert_eq!(KernelParams::new(2, 0.3, -2.0, 1.0).unwrap().regime(), Regime::Soft);
}

#[test]
fn angular_factor_closed_forms() {
    let p2 = KernelParams::new(2, 0.25, 0.0, 1.0).unwrap();
    let p3 = KernelParams::new(3, 0.25, 0.0, 1.0).unwrap();
    assert!((p2.b_of_theta(1.0) - 1.0).abs() < 1e-15);
    assert!((p3.b_of_theta(1.0) - 1.0 / 1f64.sin()).abs() < 1e-14);
    assert!((p2.b_of_theta(FRAC_PI_2) - FRAC_PI_2.powf(-1.5)).abs() < 1e-14);
    assert_eq!(p3.b_of_theta(FRAC_PI_2 + 1e-9), 0.0);
    assert_eq!(p3.angular_b(-0.2), 0.0);
    assert!(p3.angular_b(1.0).is_infinite());
    assert!((p3.angular_b(0.5f64.cos()) - p3.b_of_theta(0.5)).abs() < 1e-12);
    // Non-integrable singularity of order θ^{−1−2s}.
    let ratio = p2.b_of_theta(1e-3) / p2.b_of_theta(2e-3);
    assert!((ratio - 2f64.powf(1.5)).abs() < 1e-9);
}

#[test]
fn dyadic_partition_is_an_indicator_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let r: f64 = 10f64.powf(rng.gen_range(-4.0..2.0));
        let sum: f64 = (-10..20).map(|k| DyadicCutoff::chi(k, r)).sum();
        assert_eq!(sum, 1.0, "r = {r}");
        let k = DyadicCutoff::index_of(r);
        let (lo, hi) = DyadicCutoff { k }.support();
        assert!(r >= lo && r < hi);
    }
    assert_eq!(DyadicCutoff::index_of(0.5), 0);
    assert_eq!(DyadicCutoff::index_of(1.0), -1);
    assert_eq!(DyadicCutoff::chi(0, 0.0), 0.0);
}

#[test]
fn maxwellian_normalisation_constants() {
    assert!((maxwellian(&[0.0; 3], 2) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    assert!((maxwellian(&[0.0; 3], 3) - (2.0 * PI).powf(-1.5)).abs() < 1e-15);
    let v = [0.3, -1.2, 0.7];
    for n in [2, 3] {
        let w = if n == 2 { [v[0], v[1], 0.0] } else { v };
        assert!((sqrt_maxwellian(&w, n).powi(2) - maxwellian(&w, n)).abs() < 1e-15);
    }
}

#[test]
fn maxwellian_derivatives_match_finite_differences() {
    let v = [0.4, -0.9, 1.3];
    let h = 1e-4;
    let m = |x: &Vector| sqrt_maxwellian(x, 3);
    for i in 0..3 {
        let mut beta = vec![0; 3];
        beta[i] = 1;
        let (mut p, mut q) = (v, v);
        p[i] += h;
        q[i] -= h;
        let fd = (m(&p) - m(&q)) / (2.0 * h);
        assert!((m_beta(&v, 3, &beta).unwrap() - fd).abs() < 1e-8);
        beta[i] = 2;
        let fd2 = (m(&p) - 2.0 * m(&v) + m(&q)) / (h * h);
        assert!((m_beta(&v, 3, &beta).unwrap() - fd2).abs() < 1e-6);
    }
    let mixed = m_beta(&v, 3, &[1, 1, 0]).unwrap();
    let f = |a: f64, b: f64| m(&[v[0] + a, v[1] + b, v[2]]);
    let fd = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    assert!((mixed - fd).abs() < 1e-6);
    assert!(matches!(m_beta(&v, 3, &[3, 0, 0]), Err(Error::UnsupportedOrder(_))));
}

#[test]
fn collisions_conserve_momentum_and_energy_and_reverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let v: Vector = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let w: Vector = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let sigma = unit([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let pair = CollisionPair::new(v, w, sigma).unwrap();
        for i in 0..3 {
            assert!((pair.v_prime[i] + pair.v_star_prime[i] - v[i] - w[i]).abs() < 1e-12);
        }
        let e0 = dot(&v, &v) + dot(&w, &w);
        let e1 = dot(&pair.v_prime, &pair.v_prime) + dot(&pair.v_star_prime, &pair.v_star_prime);
        assert!((e0 - e1).abs() < 1e-11 * e0.max(1.0));
        let back = pair.reversed().unwrap();
        for i in 0..3 {
            assert!((back.v_prime[i] - v[i]).abs() < 1e-12 && (back.v_star_prime[i] - w[i]).abs() < 1e-12);
        }
    }
    assert!(matches!(CollisionPair::new([1.0; 3], [1.0; 3], [1.0, 0.0, 0.0]), Err(Error::Singular(_))));
    assert!(CollisionPair::new([1.0; 3], [0.0; 3], [1.0, 1.0, 0.0]).is_err());
}

/// Determinant of the finite-difference Jacobian of `v ↦ v + ϑ(v' − v)`.
fn fd_jacobian(n: usize, v: Vector, v_star: Vector, sigma: Vector, theta: f64) -> f64 {
    let zeta = |x: &Vector| {
        let (vp, _) = post_collisional(x, &v_star, &sigma);
        [x[0] + theta * (vp[0] - x[0]), x[1] + theta * (vp[1] - x[1]), x[2] + theta * (vp[2] - x[2])]
    };
    let h = 1e-6;
    let mut j = [[0.0; 3]; 3];
    for c in 0..n {
        let (mut p, mut q) = (v, v);
        p[c] += h;
        q[c] -= h;
        let (zp, zq) = (zeta(&p), zeta(&q));
        for r in 0..n {
            j[r][c] = (zp[r] - zq[r]) / (2.0 * h);
        }
    }
    if n == 2 {
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    } else {
        j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
    }
}

#[test]
fn shift_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for n in [2, 3] {
        for _ in 0..200 {
            let mut v: Vector = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let mut w: Vector = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let mut s: Vector = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if n == 2 {
                v[2] = 0.0;
                w[2] = 0.0;
                s[2] = 0.0;
            }
            let k = unit(sub(&v, &w));
            let mut sigma = unit(s);
            if dot(&k, &sigma) < 0.0 {
                sigma = [-sigma[0], -sigma[1], -sigma[2]];
            }
            let theta = rng.gen_range(0.0..1.0);
            let exact = jacobian_zeta_shift_n(n, theta, dot(&k, &sigma)).unwrap();
            let fd = fd_jacobian(n, v, w, sigma, theta);
            assert!((exact - fd).abs() < 1e-6, "n={n} exact {exact} fd {fd}");
        }
    }
    assert_eq!(jacobian_zeta_shift(0.0, 0.3).unwrap(), 1.0);
    assert!((jacobian_zeta_shift(1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
    assert!(jacobian_zeta_shift(1.2, 0.5).is_err());
    assert!(jacobian_zeta_shift(0.5, -0.1).is_err());
}

#[test]
fn kernel_params_serde_round_trip() {
    let p = KernelParams::new(2, 0.3, -2.0, 1.5).unwrap();
    let back: KernelParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(p, back);
}
