//! Elementary properties of the anisotropic norm and of the geometric
//! Littlewood–Paley profiles.

use grazing::kernel::KernelParams;
use grazing::littlewood_paley::{LpBasis, LpQuadrature};
use grazing::norms::{isotropic_hs, l2_weighted, nsg_norm, Bump, NormConfig, PairRule};
use grazing::quadrature::VelocityGrid;

fn grid() -> VelocityGrid {
    VelocityGrid::new(2, 6.0, 24).unwrap()
}

#[test]
fn anisotropic_norm_is_positive_and_homogeneous() {
    let params = KernelParams::new(2, 0.25, 0.0, 1.0).unwrap();
    let cfg = NormConfig::new(params, 0.0);
    let rule = PairRule::default();
    let f = Bump::new([0.5, -0.5, 0.0], std::f64::consts::FRAC_1_SQRT_2);
    let g = Bump { amplitude: 2.0, ..f };
    let a = nsg_norm(&f, &grid(), &cfg, &rule).unwrap();
    let b = nsg_norm(&g, &grid(), &cfg, &rule).unwrap();
    assert!(a > 0.0);
    assert!((b - 2.0 * a).abs() < 1e-12 * b);
    // The anisotropic norm dominates the weighted L² part.
    assert!(a >= l2_weighted(&f, &grid(), 0.0) * (1.0 - 1e-12));
    let hs = isotropic_hs(&f, &grid(), 0.25, 0.0, &rule).unwrap();
    assert!(hs > 0.0 && hs.is_finite());
}

#[test]
fn norm_config_rejects_a_moved_metric_cutoff() {
    let params = KernelParams::new(2, 0.25, 0.0, 1.0).unwrap();
    let mut cfg = NormConfig::new(params, 0.0);
    assert!(cfg.validate().is_ok());
    cfg.d_cut = 2.0;
    assert!(cfg.validate().is_err());
    let cfg = NormConfig { cone_eps: 1.0, ..NormConfig::new(params, 0.0) };
    assert!(cfg.validate().is_err());
}

#[test]
fn lp_profiles_are_normalised_and_psi_has_zero_mean() {
    let basis = LpBasis::build(2, 1.0 / 16.0, 2).unwrap();
    let fine_quad = LpQuadrature { panels: 16, ..LpQuadrature::default() };
    let fine = LpBasis::with_quadrature(2, 1.0 / 16.0, 2, fine_quad).unwrap();
    for v in [[0.0, 0.0, 0.0], [1.5, -0.5, 0.0], [-3.0, 2.0, 0.0]] {
        // Normalisation holds up to the disk quadrature error, which shrinks
        // under panel refinement.
        let (coarse, refined) = (basis.phi0_normalization_residual(&v).abs(), fine.phi0_normalization_residual(&v).abs());
        assert!(coarse < 1e-5, "phi0 at {v:?}: {coarse:e}");
        assert!(refined < 0.1 * coarse.max(1e-9), "phi0 at {v:?}: {refined:e} vs {coarse:e}");
        assert!(basis.phi_normalization_residual(&v).abs() < 1e-5, "phi at {v:?}");
        // The moment-cancelling combination integrates to zero exactly.
        assert!(basis.psi_moment(&v, |_| 1.0).abs() < 1e-10, "psi at {v:?}");
    }
    assert_eq!(basis.phi0(1.0), 0.0);
    assert!(basis.phi0(0.0) > 0.0);
}

#[test]
fn resolvable_index_tracks_the_mesh() {
    assert_eq!(LpBasis::max_resolvable(1.0 / 16.0), 3);
    assert_eq!(LpBasis::max_resolvable(0.5), 0);
}
