//! Geometric Littlewood–Paley projections on the paraboloid `v ↦ (v, |v|²/2)`.
//!
//! The profile is built from a radial bump `φ₀` on `ℝ^{n+1}` by the product
//! `φ = Π_{|k|≤M, k≠0} (I − 2^{−n+k} D)/(1 − 2^k) φ₀` with the dilation
//! `Dφ(w) = φ(w/2)`; expanding the product gives `φ = Σ_m c_m D^m φ₀`, so
//! every evaluation reduces to a finite sum of dilated bumps.  The band profile
//! is `ψ = φ − 2^{−n} Dφ`.
//!
//! Projections are integrated in tangent-plane coordinates: with
//! `v' = v + 2^{−j} τ_v u` one has `dv' = 2^{−nj} ⟨v⟩^{−1} du` and
//! `2^j(v̲' − v̲) = I_v u + ½ 2^{−j} |τ_v u|² e_{n+1}`, hence
//! `P_j f(v) = ⟨v⟩^{−1} ∫ du φ(2^j(v̲' − v̲)) ⟨v'⟩ f(v')`.
//! Each dilated component is integrated with its own polar Gauss rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, bracket, lift, lift_map, scale, tau, Vector};
use crate::kernel::KernelParams;
use crate::linearized::linear_fit;
use crate::norms::{nsg_parts, NormConfig, PairRule};
use crate::quadrature::{gauss_legendre_on, Field, VelocityGrid};

/// Polar quadrature controls for the projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpQuadrature {
    /// Radial panels per component disk.
    pub panels: usize,
    /// Gauss nodes per panel.
    pub gauss: usize,
    /// Angular nodes (two dimensions) / azimuths (three dimensions).
    pub n_ang: usize,
    /// Outer radius of each component disk relative to its support radius.
    pub reach: f64,
}

impl Default for LpQuadrature {
    fn default() -> Self {
        Self { panels: 4, gauss: 8, n_ang: 48, reach: 1.5 }
    }
}

/// Moment-cancelling Littlewood–Paley profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpBasis {
    pub n: usize,
    /// Cancellation order `M`.
    pub m: usize,
    /// Support radius of `φ₀`.
    pub r: f64,
    /// Normalisation constant of `φ₀`.
    pub c0: f64,
    /// Coefficients `c_m` of `φ = Σ_m c_m D^m φ₀`.
    pub coeffs: Vec<f64>,
    pub quad: LpQuadrature,
    /// Cached polar rules of the dilated components (projection reach).
    #[serde(skip)]
    disks: Vec<Vec<(Vector, f64)>>,
}

/// Unnormalised smooth bump `exp(−1/(1 − x²))` on `|x| < 1`.
#[inline]
fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

/// Surface measure of the unit sphere in `ℝⁿ`.
fn sphere_area(n: usize) -> f64 {
    match n {
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => unreachable!("dimension validated"),
    }
}

impl LpBasis {
    /// Builds the profile of order `m ≥ 2` with `φ₀` supported in `|w| ≤ r`.
    pub fn build(m: usize, r: f64, n: usize) -> Result<Self> {
        Self::with_quadrature(m, r, n, LpQuadrature::default())
    }

    pub fn with_quadrature(m: usize, r: f64, n: usize, quad: LpQuadrature) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!("cancellation order M = {m} must be at least 2")));
        }
        if !(2..=3).contains(&n) {
            return Err(Error::Domain(format!("dimension n = {n} not supported")));
        }
        if !(r > 0.0) || 4f64.powi(m as i32) * r > 1.0 + 1e-12 {
            return Err(Error::Config(format!("support radius R = {r} violates 2^(2M) R ≤ 1 for M = {m}")));
        }
        // ∫_{ℝⁿ} φ₀(|u|) du = |S^{n−1}| ∫_0^R bump(ρ/R) ρ^{n−1} dρ.
        let mut radial = 0.0;
        for (x, w) in gauss_legendre_on(64, 0.0, 1.0) {
            radial += w * bump(x) * x.powi(n as i32 - 1);
        }
        let c0 = 1.0 / (sphere_area(n) * radial * r.powi(n as i32));
        // Expand Π_{k} (1 − 2^{−n+k} x)/(1 − 2^k) as a polynomial in x.
        let mut coeffs = vec![1.0];
        for k in (-(m as i32))..=(m as i32) {
            if k == 0 {
                continue;
            }
            let a = 2f64.powi(k - n as i32);
            let denom = 1.0 - 2f64.powi(k);
            let mut next = vec![0.0; coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i] += c / denom;
                next[i + 1] -= a * c / denom;
            }
            coeffs = next;
        }
        let mut basis = Self { n, m, r, c0, coeffs, quad, disks: Vec::new() };
        basis.disks = (0..=basis.coeffs.len()).map(|k| basis.disk(quad.reach * r * 2f64.powi(k as i32))).collect();
        Ok(basis)
    }

    /// Support radius `2^{2M} R` of `φ`.
    pub fn support(&self) -> f64 {
        4f64.powi(self.m as i32) * self.r
    }

    /// `φ₀(w)` for `|w| = rho`.
    #[inline]
    pub fn phi0(&self, rho: f64) -> f64 {
        self.c0 * bump(rho / self.r)
    }

    /// `φ(w)` for `|w| = rho`.
    pub fn phi(&self, rho: f64) -> f64 {
        self.coeffs.iter().enumerate().map(|(k, c)| c * self.phi0(rho / 2f64.powi(k as i32))).sum()
    }

    /// `ψ(w) = φ(w) − 2^{−n} φ(w/2)`.
    pub fn psi(&self, rho: f64) -> f64 {
        self.phi(rho) - 2f64.powi(-(self.n as i32)) * self.phi(0.5 * rho)
    }

    /// Coefficients of `ψ = Σ_m d_m D^m φ₀`.
    fn psi_coeffs(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.coeffs.len() + 1];
        let shrink = 2f64.powi(-(self.n as i32));
        for (k, c) in self.coeffs.iter().enumerate() {
            d[k] += c;
            d[k + 1] -= shrink * c;
        }
        d
    }

    /// Polar nodes `(u, weight)` of the disk of radius `rho_max`.
    fn disk(&self, rho_max: f64) -> Vec<(Vector, f64)> {
        let q = &self.quad;
        let mut out = Vec::new();
        let width = rho_max / q.panels as f64;
        let mut radial = Vec::new();
        for p in 0..q.panels {
            radial.extend(gauss_legendre_on(q.gauss, p as f64 * width, (p + 1) as f64 * width));
        }
        let dphi = 2.0 * std::f64::consts::PI / q.n_ang as f64;
        if self.n == 2 {
            for &(r, w) in &radial {
                for j in 0..q.n_ang {
                    let ph = (j as f64 + 0.5) * dphi;
                    out.push(([r * ph.cos(), r * ph.sin(), 0.0], w * r * dphi));
                }
            }
        } else {
            let polar = gauss_legendre_on(q.n_ang.div_ceil(2), -1.0, 1.0);
            for &(r, w) in &radial {
                for &(c, wc) in &polar {
                    let st = (1.0 - c * c).sqrt();
                    for j in 0..q.n_ang {
                        let ph = (j as f64 + 0.5) * dphi;
                        out.push(([r * st * ph.cos(), r * st * ph.sin(), r * c], w * wc * r * r * dphi));
                    }
                }
            }
        }
        out
    }

    /// `∫ du p(u) (profile)(I_v u)` on the tangent plane at `v` for a
    /// profile given by dilation coefficients.
    fn tangent_moment<P: Fn(&Vector) -> f64>(&self, coeffs: &[f64], v: &Vector, p: P) -> f64 {
        let mut total = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let scale_k = 2f64.powi(k as i32);
            for (u, w) in self.disk(self.r * scale_k) {
                let iu = lift_map(v, &u);
                let rho = iu.iter().map(|x| x * x).sum::<f64>().sqrt();
                total += w * c * self.phi0(rho / scale_k) * p(&u);
            }
        }
        total
    }

    /// Normalisation residual `∫ φ₀(I_v u) du − 1`.
    pub fn phi0_normalization_residual(&self, v: &Vector) -> f64 {
        self.tangent_moment(&[1.0], v, |_| 1.0) - 1.0
    }

    /// Normalisation residual of the composed profile `∫ φ(I_v u) du − 1`.
    pub fn phi_normalization_residual(&self, v: &Vector) -> f64 {
        self.tangent_moment(&self.coeffs, v, |_| 1.0) - 1.0
    }

    /// Moment `∫ p(u) ψ(I_v u) du`.
    pub fn psi_moment<P: Fn(&Vector) -> f64>(&self, v: &Vector, p: P) -> f64 {
        self.tangent_moment(&self.psi_coeffs(), v, p)
    }

    /// Moment `∫ p(u) (∂_{w_a} ψ)(I_v u) du` of a first derivative on `ℝ^{n+1}`
    /// (`a ≤ n`, the last index being the height direction).
    pub fn psi_gradient_moment<P: Fn(&Vector) -> f64>(&self, v: &Vector, a: usize, p: P) -> f64 {
        let d = self.psi_coeffs();
        let mut total = 0.0;
        for (k, c) in d.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let sk = 2f64.powi(k as i32);
            for (u, w) in self.disk(self.r * sk) {
                let iu = lift_map(v, &u);
                let rho = iu.iter().map(|x| x * x).sum::<f64>().sqrt();
                if rho == 0.0 {
                    continue;
                }
                // d/dw_a φ₀(|w|/s) = φ₀'(ρ/s) w_a/(ρ s).
                let x = rho / (sk * self.r);
                let dphi0 = if x >= 1.0 { 0.0 } else { -self.c0 * bump(x) * 2.0 * x / (1.0 - x * x).powi(2) / self.r };
                let comp = if a == self.n { iu[3] } else { iu[a] };
                total += w * c * dphi0 * comp / (rho * sk) * p(&u);
            }
        }
        total
    }

    /// Largest resolvable index for sampled fields: `2^{−j} ≥ 2h`.
    pub fn max_resolvable(h: f64) -> i32 {
        (-(2.0 * h).log2()).floor() as i32
    }

    fn check_resolution<F: Field>(&self, j: i32, f: &F) -> Result<()> {
        if j < 0 {
            return Err(Error::Domain(format!("scale index j = {j} must be non-negative")));
        }
        if let Some(h) = f.resolution() {
            let jmax = Self::max_resolvable(h);
            if j > jmax {
                return Err(Error::Refused(format!("scale 2^-{j} not resolvable on spacing h = {h}; max j = {jmax}")));
            }
        }
        Ok(())
    }

    /// Integral with a dilation-coefficient profile at scale `j`.
    fn apply_profile<F: Field>(&self, coeffs: &[f64], j: i32, f: &F, v: &Vector) -> f64 {
        let sj = 2f64.powi(-j);
        let lv = lift(v);
        let mut total = 0.0;
        for (k, c) in coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let sk = 2f64.powi(k as i32);
            for (u, w) in &self.disks[k] {
                let vp = add(v, &scale(sj, &tau(v, u)));
                let lp = lift(&vp);
                let rho = (0..4).map(|i| (lp[i] - lv[i]) * (lp[i] - lv[i])).sum::<f64>().sqrt() / sj;
                let ph = self.phi0(rho / sk);
                if ph == 0.0 {
                    continue;
                }
                total += w * c * ph * bracket(&vp) * f.eval(&vp);
            }
        }
        total / bracket(v)
    }

    /// `P_j f(v)`.
    pub fn project_p<F: Field>(&self, j: i32, f: &F, v: &Vector) -> Result<f64> {
        self.check_resolution(j, f)?;
        Ok(self.apply_profile(&self.coeffs, j, f, v))
    }

    /// `Q_j f(v) = P_j f(v) − P_{j−1} f(v)` (`Q_0 = P_0`).
    pub fn project_q<F: Field>(&self, j: i32, f: &F, v: &Vector) -> Result<f64> {
        self.check_resolution(j, f)?;
        if j == 0 {
            return Ok(self.apply_profile(&self.coeffs, 0, f, v));
        }
        Ok(self.apply_profile(&self.coeffs, j, f, v) - self.apply_profile(&self.coeffs, j - 1, f, v))
    }
}

/// The constant function one.
struct One;

impl Field for One {
    fn eval(&self, _v: &Vector) -> f64 {
        1.0
    }
}

/// Decay of `sup_v |Q_j(1)(v)|` over interior points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QjDecay {
    pub j: Vec<i32>,
    pub sup: Vec<f64>,
    /// Least-squares slope of `log₂ sup` against `j`.
    pub slope: f64,
}

/// `sup |Q_j(1)|` over `points` for each `j` in the range, with the fitted slope.
pub fn qj_one_decay(basis: &LpBasis, j_range: std::ops::RangeInclusive<i32>, points: &[Vector]) -> Result<QjDecay> {
    let js: Vec<i32> = j_range.collect();
    if js.len() < 3 {
        return Err(Error::Domain(format!("need at least three scales, got {}", js.len())));
    }
    let mut sup = Vec::with_capacity(js.len());
    for &j in &js {
        let mut m = 0.0f64;
        for v in points {
            m = m.max(basis.project_q(j, &One, v)?.abs());
        }
        sup.push(m);
    }
    let x: Vec<f64> = js.iter().map(|&j| j as f64).collect();
    let y: Vec<f64> = sup.iter().map(|s| s.max(1e-300).log2()).collect();
    let (_, slope, _) = linear_fit(&x, &y);
    Ok(QjDecay { j: js, sup, slope })
}

/// Square function and its comparison with the anisotropic norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareFunction {
    /// `Σ_{j≤J} 2^{2sj} ∫ |Q_j f|² ⟨v⟩^ρ`, cumulative in `J`.
    pub partial_sums: Vec<f64>,
    /// `|f|²_{L²_ρ} + ∫∫ (⟨v⟩⟨v'⟩)^{(ρ+1)/2} (f − f')² d^{−n−2s} 1_{d≤1}`.
    pub rhs: f64,
    /// `partial_sums.last() / rhs`.
    pub ratio: f64,
}

/// Square function `Σ_{j=0}^{j_max} 2^{2sj} ∫ |Q_j f|² ⟨v⟩^ρ` evaluated on
/// the grid nodes (restricted to the numerical support of `f` widened by one),
/// and its ratio against the anisotropic right-hand side.
pub fn square_function<F: Field>(
    f: &F,
    rho: f64,
    s: f64,
    basis: &LpBasis,
    j_max: i32,
    grid: &VelocityGrid,
    pair_rule: &PairRule,
) -> Result<SquareFunction> {
    let nodes = grid.nodes();
    let vals: Vec<f64> = nodes.iter().map(|v| f.eval(v)).collect();
    let fmax = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let live: Vec<Vector> = nodes.iter().zip(&vals).filter(|(_, x)| x.abs() > 1e-10 * fmax).map(|(v, _)| *v).collect();
    let reach = 1.5 + grid.h;
    let pts: Vec<Vector> = nodes
        .iter()
        .filter(|v| live.iter().any(|w| crate::geometry::norm(&crate::geometry::sub(v, w)) <= reach))
        .copied()
        .collect();
    let hn = grid.cell_volume();
    let mut partial = Vec::with_capacity(j_max as usize + 1);
    let mut acc = 0.0;
    for j in 0..=j_max {
        let mut sj = 0.0;
        for v in &pts {
            let q = basis.project_q(j, f, v)?;
            sj += q * q * bracket(v).powf(rho);
        }
        acc += 2f64.powf(2.0 * s * j as f64) * sj * hn;
        partial.push(acc);
    }
    // Right-hand side: the anisotropic norm with weight exponent ρ = γ + 2s.
    let params = KernelParams { n: grid.n, s, gamma: rho - 2.0 * s, c_phi: 1.0 };
    let parts = nsg_parts(f, grid, &NormConfig::new(params, 0.0), pair_rule)?;
    let rhs = parts.total_sq();
    Ok(SquareFunction { ratio: acc / rhs, partial_sums: partial, rhs })
}

/// `‖P_j f‖_{L²_ρ} / ‖f‖_{L²_ρ}` on the grid.
pub fn projection_bound<F: Field>(basis: &LpBasis, j: i32, f: &F, rho: f64, grid: &VelocityGrid) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for v in grid.nodes() {
        let w = bracket(&v).powf(rho);
        let fv = f.eval(&v);
        den += fv * fv * w;
        let p = basis.project_p(j, f, &v)?;
        num += p * p * w;
    }
    if den == 0.0 {
        return Err(Error::Domain("zero field".into()));
    }
    Ok((num / den).sqrt())
}
