//! Weighted `L²` norms, the anisotropic norm `N^{s,γ}_ℓ` built on the lifted
//! paraboloid metric, isotropic Gagliardo comparators, the cone-restricted
//! semi-norm `N_0`, and the sandwich ratios between them.
//!
//! The outer `v` integral is the grid midpoint sum; the inner `v'` integral is a
//! polar rule centred at `v` with Gauss–Legendre shells graded towards the
//! diagonal, so the self-cell is never sampled and the integrable diagonal
//! singularity `|v−v'|^{2−n−2s}` is resolved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bracket, lift, metric_d, norm, Vector};
use crate::kernel::KernelParams;
use crate::quadrature::{gauss_legendre_on, Field, ScalarField, VelocityGrid};

/// Parameters of the anisotropic norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    pub params: KernelParams,
    /// Weight order `ℓ` (any real for linear-theory checks).
    pub ell: f64,
    /// Metric cutoff radius (fixed to one).
    #[serde(default = "one")]
    pub d_cut: f64,
    /// Cone aperture `ε` of the `N_0` restriction.
    #[serde(default = "default_cone_eps")]
    pub cone_eps: f64,
}

fn one() -> f64 {
    1.0
}

fn default_cone_eps() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}

impl NormConfig {
    pub fn new(params: KernelParams, ell: f64) -> Self {
        Self { params, ell, d_cut: 1.0, cone_eps: default_cone_eps() }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.d_cut != 1.0 {
            return Err(Error::Config(format!("metric cutoff is fixed to 1 (got {})", self.d_cut)));
        }
        if !(self.cone_eps > 0.0 && self.cone_eps < 1.0) {
            return Err(Error::Config(format!("cone aperture {} outside (0, 1)", self.cone_eps)));
        }
        Ok(())
    }
}

/// Inner (`v'`) quadrature of the double integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRule {
    /// Gauss–Legendre nodes per radial shell.
    pub gauss: usize,
    /// Directions (two dimensions) or azimuths (three dimensions).
    pub n_ang: usize,
    /// Innermost shell radius.
    pub r_min: f64,
    /// Field values below this fraction of the maximum count as zero when
    /// localising the outer sum.
    pub support_tol: f64,
}

impl Default for PairRule {
    fn default() -> Self {
        Self { gauss: 4, n_ang: 32, r_min: 1e-4, support_tol: 1e-12 }
    }
}

impl PairRule {
    /// Relative offsets `(z, weight)` filling the unit ball.
    fn offsets(&self, n: usize) -> Vec<(Vector, f64)> {
        let mut radial = Vec::new();
        let mut hi = 1.0;
        while hi > self.r_min {
            let lo = (0.5 * hi).max(self.r_min);
            radial.extend(gauss_legendre_on(self.gauss, lo, hi));
            hi = lo;
        }
        let mut out = Vec::new();
        if n == 2 {
            let dphi = 2.0 * std::f64::consts::PI / self.n_ang as f64;
            for &(r, w) in &radial {
                for j in 0..self.n_ang {
                    let ph = (j as f64 + 0.5) * dphi;
                    out.push(([r * ph.cos(), r * ph.sin(), 0.0], w * r * dphi));
                }
            }
        } else {
            let polar = gauss_legendre_on(self.n_ang.div_ceil(2).max(2), -1.0, 1.0);
            let dphi = 2.0 * std::f64::consts::PI / self.n_ang as f64;
            for &(r, w) in &radial {
                for &(c, wc) in &polar {
                    let st = (1.0 - c * c).sqrt();
                    for j in 0..self.n_ang {
                        let ph = (j as f64 + 0.5) * dphi;
                        out.push(([r * st * ph.cos(), r * st * ph.sin(), r * c], w * wc * r * r * dphi));
                    }
                }
            }
        }
        out
    }
}

/// Grid nodes whose unit ball meets the (numerical) support of `f`.
fn outer_points<F: Field>(f: &F, grid: &VelocityGrid, tol: f64, reach: f64) -> Vec<Vector> {
    let nodes = grid.nodes();
    let vals: Vec<f64> = nodes.iter().map(|v| f.eval(v)).collect();
    let fmax = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if fmax == 0.0 {
        return Vec::new();
    }
    let live: Vec<Vector> = nodes.iter().zip(&vals).filter(|(_, x)| x.abs() > tol * fmax).map(|(v, _)| *v).collect();
    let r = reach + grid.h * (grid.n as f64).sqrt();
    // Bounding box test first, then exact distance.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in &live {
        for d in 0..grid.n {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    nodes
        .into_iter()
        .filter(|v| (0..grid.n).all(|d| v[d] >= lo[d] - r && v[d] <= hi[d] + r))
        .filter(|v| live.iter().any(|w| norm(&crate::geometry::sub(v, w)) <= r))
        .collect()
}

/// The pieces of the anisotropic norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParts {
    /// `|w^ℓ f|²_{L²_{γ+2s}}`.
    pub l2_part: f64,
    /// Full anisotropic semi-norm squared (pairs with `d ≤ 1`).
    pub semi: f64,
    /// Cone-restricted semi-norm squared `|f|²_{N_0}`.
    pub cone: f64,
}

impl NormParts {
    /// `|f|²_{N^{s,γ}_ℓ}`.
    pub fn total_sq(&self) -> f64 {
        self.l2_part + self.semi
    }

    /// `|f|_{N^{s,γ}_ℓ}`.
    pub fn norm(&self) -> f64 {
        self.total_sq().sqrt()
    }
}

/// `∫ ⟨v⟩^ℓ |f|²` by grid quadrature.
pub fn l2_weighted<F: Field>(f: &F, grid: &VelocityGrid, ell_power: f64) -> f64 {
    let hn = grid.cell_volume();
    (0..grid.len())
        .map(|i| {
            let v = grid.node(i);
            let x = f.eval(&v);
            bracket(&v).powf(ell_power) * x * x
        })
        .sum::<f64>()
        * hn
}

/// `∫ ⟨v⟩^ℓ |f|²` for a sampled field.
pub fn l2_weighted_field(f: &ScalarField, ell_power: f64) -> f64 {
    l2_weighted(f, &f.grid, ell_power)
}

/// All pieces of `|f|²_{N^{s,γ}_ℓ}`:
/// `|w^ℓ f|²_{L²_{γ+2s}} + ∫∫ (⟨v⟩⟨v'⟩)^{(γ+2s+1)/2} w^{2ℓ}(v) (f'−f)² d^{−n−2s} 1_{d≤1}`,
/// together with the cone-restricted part (lifted difference with
/// `|u_{n+1}| ≤ ε|u|`).
pub fn nsg_parts<F: Field>(f: &F, grid: &VelocityGrid, cfg: &NormConfig, rule: &PairRule) -> Result<NormParts> {
    cfg.validate()?;
    let p = cfg.params;
    let n = p.n;
    let rho = p.gamma + 2.0 * p.s;
    let half = 0.5 * (rho + 1.0);
    let expo = n as f64 + 2.0 * p.s;
    let hn = grid.cell_volume();
    let l2_part = (0..grid.len())
        .map(|i| {
            let v = grid.node(i);
            let x = f.eval(&v);
            bracket(&v).powf(rho) * p.weight_pow(&v, cfg.ell) * x * x
        })
        .sum::<f64>()
        * hn;
    let offsets = rule.offsets(n);
    let (mut semi, mut cone) = (0.0, 0.0);
    for v in outer_points(f, grid, rule.support_tol, cfg.d_cut) {
        let fv = f.eval(&v);
        let bv = bracket(&v).powf(half) * p.weight_pow(&v, cfg.ell);
        let lv = lift(&v);
        let (mut a_full, mut a_cone) = (0.0, 0.0);
        for (z, w) in &offsets {
            let vp = crate::geometry::add(&v, z);
            let d = metric_d(&v, &vp);
            if d > cfg.d_cut {
                continue;
            }
            let df = f.eval(&vp) - fv;
            let c = w * bracket(&vp).powf(half) * df * df / d.powf(expo);
            a_full += c;
            let lp = lift(&vp);
            let height = (lv[3] - lp[3]).abs();
            if height <= cfg.cone_eps * d {
                a_cone += c;
            }
        }
        semi += bv * a_full;
        cone += bv * a_cone;
    }
    Ok(NormParts { l2_part, semi: semi * hn, cone: cone * hn })
}

/// `|f|_{N^{s,γ}_ℓ}`.
pub fn nsg_norm<F: Field>(f: &F, grid: &VelocityGrid, cfg: &NormConfig, rule: &PairRule) -> Result<f64> {
    Ok(nsg_parts(f, grid, cfg, rule)?.norm())
}

/// Cone-restricted semi-norm `|f|_{N_0}`.
pub fn cone_seminorm_n0<F: Field>(f: &F, grid: &VelocityGrid, cfg: &NormConfig, rule: &PairRule) -> Result<f64> {
    Ok(nsg_parts(f, grid, cfg, rule)?.cone.sqrt())
}

/// Isotropic weighted Gagliardo norm
/// `|f|²_{H^s_ℓ} = ∫⟨v⟩^ℓ f² + ∫∫ (⟨v⟩⟨v'⟩)^{ℓ/2} (f'−f)² |v−v'|^{−n−2s} 1_{|v−v'|≤1}`.
pub fn isotropic_hs<F: Field>(f: &F, grid: &VelocityGrid, s: f64, ell_power: f64, rule: &PairRule) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s = {s} outside (0, 1)")));
    }
    let n = grid.n;
    let hn = grid.cell_volume();
    let l2 = l2_weighted(f, grid, ell_power);
    let expo = n as f64 + 2.0 * s;
    let offsets = rule.offsets(n);
    let mut semi = 0.0;
    for v in outer_points(f, grid, rule.support_tol, 1.0) {
        let fv = f.eval(&v);
        let bv = bracket(&v).powf(0.5 * ell_power);
        let mut acc = 0.0;
        for (z, w) in &offsets {
            let vp = crate::geometry::add(&v, z);
            let df = f.eval(&vp) - fv;
            acc += w * bracket(&vp).powf(0.5 * ell_power) * df * df / norm(z).powf(expo);
        }
        semi += bv * acc;
    }
    Ok((l2 + semi * hn).sqrt())
}

/// One row of the sandwich table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub label: String,
    /// `|f|_{H^s_γ} / |f|_{N^{s,γ}}` (`None` for a zero field).
    pub lower_ratio: Option<f64>,
    /// `|f|_{N^{s,γ}} / |f|_{H^s_{γ+2s}}`.
    pub upper_ratio: Option<f64>,
    pub hs_gamma: f64,
    pub nsg: f64,
    pub hs_gamma_2s: f64,
}

/// Sandwich ratios `|f|_{H^s_γ}/|f|_{N^{s,γ}}` and `|f|_{N^{s,γ}}/|f|_{H^s_{γ+2s}}`
/// over a suite of labelled fields (weight order `ℓ = 0`).
pub fn sandwich_ratios<F: Field>(
    suite: &[(String, F)],
    grid: &VelocityGrid,
    params: &KernelParams,
    rule: &PairRule,
) -> Result<Vec<SandwichRow>> {
    let cfg = NormConfig::new(*params, 0.0);
    let mut rows = Vec::with_capacity(suite.len());
    for (label, f) in suite {
        let hs_g = isotropic_hs(f, grid, params.s, params.gamma, rule)?;
        let nsg = nsg_norm(f, grid, &cfg, rule)?;
        let hs_g2 = isotropic_hs(f, grid, params.s, params.gamma + 2.0 * params.s, rule)?;
        let ok = nsg > 0.0 && hs_g2 > 0.0;
        rows.push(SandwichRow {
            label: label.clone(),
            lower_ratio: ok.then(|| hs_g / nsg),
            upper_ratio: ok.then(|| nsg / hs_g2),
            hs_gamma: hs_g,
            nsg,
            hs_gamma_2s: hs_g2,
        });
    }
    Ok(rows)
}

/// Unit-width Gaussian bump `exp(−|v − c|²/2)` (optionally times a linear tilt).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vector,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn new(center: Vector, width: f64) -> Self {
        Self { center, width, amplitude: 1.0 }
    }
}

impl Field for Bump {
    #[inline]
    fn eval(&self, v: &Vector) -> f64 {
        let d2 = crate::geometry::norm2(&crate::geometry::sub(v, &self.center));
        self.amplitude * (-0.5 * d2 / (self.width * self.width)).exp()
    }
}
