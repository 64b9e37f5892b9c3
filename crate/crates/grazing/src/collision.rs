//! The collision operator `Q`, the perturbative bilinear form `Γ`, the
//! linearised operator `L = N + K`, the loss frequency `ν̃`, the anisotropic
//! semi-norm `|·|_B`, the two representations of the trilinear form
//! `⟨w^{2ℓ}Γ(g,h), f⟩`, the dyadic pieces `T_±, T_*`, the Carleman kernel
//! `K(v,v')` and the entropy functionals.
//!
//! Strong-form operators are evaluated at grid nodes `v`; the `v_*` integral is
//! the midpoint sum over the same grid and the angular integral uses a
//! θ-graded [`SphereRule`].  Off-grid values (`g(v')`, `g(v'_*)`) come from the
//! field's own evaluation (the C¹ cubic interpolant for sampled fields, exact
//! values for analytic ones).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, axpy, dot, norm, norm2, orthogonal_complement, scale, sub, Vector};
use crate::kernel::{sqrt_maxwellian, DyadicCutoff, KernelParams};
use crate::quadrature::{gauss_legendre_on, Compensation, Field, ScalarField, SphereRule, SqrtMaxwellian, VelocityGrid};

/// Orthonormal transverse frame of a unit vector `k` (two or three dimensions).
#[inline(always)]
pub(crate) fn transverse_frame(n: usize, k: &Vector) -> (Vector, Vector) {
    if n == 2 {
        return ([-k[1], k[0], 0.0], [0.0; 3]);
    }
    // Cross product with the least aligned axis.
    let ax = if k[0].abs() <= k[1].abs() && k[0].abs() <= k[2].abs() {
        0
    } else if k[1].abs() <= k[2].abs() {
        1
    } else {
        2
    };
    let mut a = [0.0; 3];
    a[ax] = 1.0;
    let c = cross(k, &a);
    let e1 = scale(1.0 / norm(&c), &c);
    (e1, cross(k, &e1))
}

#[inline(always)]
fn cross(a: &Vector, b: &Vector) -> Vector {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Angular rule pre-multiplied by the angular kernel.
#[derive(Debug, Clone)]
struct AngularTable {
    local: Vec<[f64; 3]>,
    bw: Vec<f64>,
}

impl AngularTable {
    fn new(params: &KernelParams, rule: &SphereRule, compensation: Compensation) -> Self {
        let mut local = Vec::new();
        let mut bw = Vec::new();
        for (i, mult) in rule.active_nodes(compensation) {
            let node = &rule.nodes[i];
            let b = params.b_of_theta(node.theta);
            if b == 0.0 {
                continue;
            }
            local.push(node.local);
            bw.push(mult * node.weight * b);
        }
        Self { local, bw }
    }
}

/// Everything needed to evaluate collision integrals on a grid.
#[derive(Debug, Clone)]
pub struct CollisionSetup {
    pub params: KernelParams,
    pub grid: VelocityGrid,
    pub rule: SphereRule,
    pub compensation: Compensation,
    table: AngularTable,
    m_grid: Vec<f64>,
}

impl CollisionSetup {
    /// Builds the setup.  Without odd pairing, `s ≥ 1/2` is refused: the
    /// first-order angular term is then not integrable.
    pub fn new(params: KernelParams, grid: VelocityGrid, rule: SphereRule, compensation: Compensation) -> Result<Self> {
        params.validate()?;
        if grid.n != params.n || rule.n != params.n {
            return Err(Error::Config("grid, rule and kernel dimensions differ".into()));
        }
        if params.s >= 0.5 && compensation == Compensation::None {
            return Err(Error::Refused(format!(
                "s = {} ≥ 1/2 requires odd-pairing compensation of the angular integral",
                params.s
            )));
        }
        let table = AngularTable::new(&params, &rule, compensation);
        let m_grid = (0..grid.len()).map(|i| sqrt_maxwellian(&grid.node(i), grid.n)).collect();
        Ok(Self { params, grid, rule, compensation, table, m_grid })
    }

    /// Default desk-scale setup: odd pairing, `q = 3` grading.
    pub fn standard(params: KernelParams, grid: VelocityGrid, n_theta: usize) -> Result<Self> {
        let rule = SphereRule::collision(params.n, n_theta)?;
        Self::new(params, grid, rule, Compensation::OddPairing)
    }

    /// Same setup with another angular resolution.
    pub fn with_angular(&self, n_theta: usize) -> Result<Self> {
        let rule = SphereRule::with_azimuth(self.params.n, n_theta, self.rule.n_phi, self.rule.q, self.rule.theta_max)?;
        Self::new(self.params, self.grid, rule, self.compensation)
    }

    /// Same setup on another grid.
    pub fn with_grid(&self, grid: VelocityGrid) -> Result<Self> {
        Self::new(self.params, grid, self.rule.clone(), self.compensation)
    }

    /// Same setup with other kernel parameters.
    pub fn with_params(&self, params: KernelParams) -> Result<Self> {
        Self::new(params, self.grid, self.rule.clone(), self.compensation)
    }

    /// Values of `M` at the grid nodes.
    pub fn m_on_grid(&self) -> &[f64] {
        &self.m_grid
    }

    /// Visits every quadrature node `(v_*, σ)` of the collision integral at `v`:
    /// `f(j, v_*, v', v'_*, weight)` with `weight = hⁿ · Φ(|v−v_*|) · b · w_σ`.
    /// The cell `v_* = v` is skipped.
    #[inline(always)]
    pub(crate) fn sweep<F: FnMut(usize, &Vector, &Vector, &Vector, f64)>(&self, v: &Vector, mut f: F) {
        let n = self.grid.n;
        let hn = self.grid.cell_volume();
        let tiny = 1e-9 * self.grid.h;
        let t = &self.table;
        for j in 0..self.grid.len() {
            let vs = self.grid.node(j);
            let u = sub(v, &vs);
            let r = norm(&u);
            if r < tiny {
                continue;
            }
            let k = scale(1.0 / r, &u);
            let (e1, e2) = transverse_frame(n, &k);
            let pref = hn * self.params.phi(r);
            let mid = scale(0.5, &add(v, &vs));
            let hr = 0.5 * r;
            for (loc, bw) in t.local.iter().zip(&t.bw) {
                let sigma = axpy(&axpy(&scale(loc[0], &k), loc[1], &e1), loc[2], &e2);
                let vp = axpy(&mid, hr, &sigma);
                let vsp = axpy(&mid, -hr, &sigma);
                f(j, &vs, &vp, &vsp, pref * bw);
            }
        }
    }

    /// `Γ(g, h)` (or `Γ_β` with `∂_β M` in place of `M(v_*)`) at the given points.
    pub fn gamma_at<G: Field, H: Field>(&self, g: &G, h: &H, beta: Option<&[usize]>, points: &[Vector]) -> Result<Vec<f64>> {
        let n = self.grid.n;
        let mstar: Vec<f64> = match beta {
            None => self.m_grid.clone(),
            Some(b) => {
                let b_order: usize = b.iter().sum();
                if b_order > 1 {
                    return Err(Error::UnsupportedOrder(format!("Γ_β implemented for |β| ≤ 1 (got {b_order})")));
                }
                (0..self.grid.len()).map(|j| crate::kernel::m_beta(&self.grid.node(j), n, b)).collect::<Result<_>>()?
            }
        };
        let gstar: Vec<f64> = (0..self.grid.len()).map(|j| g.eval(&self.grid.node(j))).collect();
        let mut out = Vec::with_capacity(points.len());
        for v in points {
            let hv = h.eval(v);
            let mut acc = 0.0;
            self.sweep(v, |j, _vs, vp, vsp, w| {
                acc += w * mstar[j] * (g.eval(vsp) * h.eval(vp) - gstar[j] * hv);
            });
            out.push(acc);
        }
        Ok(out)
    }

    /// `Γ(g, h)` on the grid nodes.
    pub fn gamma_apply<G: Field, H: Field>(&self, g: &G, h: &H, beta: Option<&[usize]>) -> Result<ScalarField> {
        let vals = self.gamma_at(g, h, beta, &self.grid.nodes())?;
        ScalarField::new(self.grid, vals)
    }

    /// `Q(G, F)(v) = ∫∫ B [G'_* F' − G_* F]` on the grid nodes.
    pub fn q_apply<G: Field, F: Field>(&self, big_g: &G, big_f: &F) -> Result<ScalarField> {
        let gstar: Vec<f64> = (0..self.grid.len()).map(|j| big_g.eval(&self.grid.node(j))).collect();
        let mut vals = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let v = self.grid.node(i);
            let fv = big_f.eval(&v);
            let mut acc = 0.0;
            self.sweep(&v, |j, _vs, vp, vsp, w| {
                acc += w * (big_g.eval(vsp) * big_f.eval(vp) - gstar[j] * fv);
            });
            vals.push(acc);
        }
        ScalarField::new(self.grid, vals)
    }

    /// `L g = −Γ(M, g) − Γ(g, M)` at the given points.
    pub fn l_at<G: Field>(&self, g: &G, points: &[Vector]) -> Vec<f64> {
        let n = self.grid.n;
        let gstar: Vec<f64> = (0..self.grid.len()).map(|j| g.eval(&self.grid.node(j))).collect();
        points
            .iter()
            .map(|v| {
                let gv = g.eval(v);
                let mv = sqrt_maxwellian(v, n);
                let mut acc = 0.0;
                self.sweep(v, |j, _vs, vp, vsp, w| {
                    let ms = self.m_grid[j];
                    let mp = sqrt_maxwellian(vp, n);
                    let msp = ms * mv / mp;
                    acc += w * ms * (msp * g.eval(vp) - ms * gv + mp * g.eval(vsp) - gstar[j] * mv);
                });
                -acc
            })
            .collect()
    }

    /// `L g` on the grid nodes.
    pub fn l_apply<G: Field>(&self, g: &G) -> ScalarField {
        ScalarField { grid: self.grid, values: self.l_at(g, &self.grid.nodes()) }
    }

    /// `N g = −Γ(M, g)` at the given points.
    pub fn n_at<G: Field>(&self, g: &G, points: &[Vector]) -> Vec<f64> {
        let n = self.grid.n;
        points
            .iter()
            .map(|v| {
                let gv = g.eval(v);
                let mv = sqrt_maxwellian(v, n);
                let mut acc = 0.0;
                self.sweep(v, |j, _vs, vp, _vsp, w| {
                    let ms = self.m_grid[j];
                    let msp = ms * mv / sqrt_maxwellian(vp, n);
                    acc += w * ms * (msp * g.eval(vp) - ms * gv);
                });
                -acc
            })
            .collect()
    }

    /// `N g` on the grid nodes.
    pub fn n_apply<G: Field>(&self, g: &G) -> ScalarField {
        ScalarField { grid: self.grid, values: self.n_at(g, &self.grid.nodes()) }
    }

    /// `K g = −Γ(g, M)` at the given points.
    pub fn k_at<G: Field>(&self, g: &G, points: &[Vector]) -> Vec<f64> {
        let n = self.grid.n;
        let gstar: Vec<f64> = (0..self.grid.len()).map(|j| g.eval(&self.grid.node(j))).collect();
        points
            .iter()
            .map(|v| {
                let mv = sqrt_maxwellian(v, n);
                let mut acc = 0.0;
                self.sweep(v, |j, _vs, vp, vsp, w| {
                    let ms = self.m_grid[j];
                    acc += w * ms * (sqrt_maxwellian(vp, n) * g.eval(vsp) - gstar[j] * mv);
                });
                -acc
            })
            .collect()
    }

    /// `K g` on the grid nodes.
    pub fn k_apply<G: Field>(&self, g: &G) -> ScalarField {
        ScalarField { grid: self.grid, values: self.k_at(g, &self.grid.nodes()) }
    }

    /// Loss frequency `ν̃(v) = ∫∫ B (M_* − M'_*) M_*`.
    pub fn nu_tilde(&self, v: &Vector) -> f64 {
        let n = self.grid.n;
        let mv = sqrt_maxwellian(v, n);
        let mut acc = 0.0;
        self.sweep(v, |j, _vs, vp, _vsp, w| {
            let ms = self.m_grid[j];
            let msp = ms * mv / sqrt_maxwellian(vp, n);
            acc += w * (ms - msp) * ms;
        });
        acc
    }

    /// `ν̃(v)` with an angular-refinement check: the value at the doubled
    /// angular resolution is returned, and an accuracy error is raised when the
    /// relative change exceeds `tol`.
    pub fn nu_tilde_checked(&self, v: &Vector, tol: f64) -> Result<f64> {
        let coarse = self.nu_tilde(v);
        let fine = self.with_angular(2 * self.rule.n_theta)?.nu_tilde(v);
        let rel = (fine - coarse).abs() / fine.abs().max(1e-300);
        if rel > tol {
            return Err(Error::Accuracy(format!("ν̃ angular refinement changed the value by {rel:.2e} > {tol:.2e}")));
        }
        Ok(fine)
    }

    /// `|g|²_{B_ℓ} = ½ ∫ dv w^{2ℓ}(v) ∫∫ B (g' − g)² M'_* M_*`, with the outer
    /// `v` integral restricted to `points` (pass all grid nodes for the full value).
    pub fn b_seminorm_sq_over<G: Field>(&self, g: &G, ell: f64, points: &[Vector]) -> f64 {
        let n = self.grid.n;
        let hn = self.grid.cell_volume();
        let mut total = 0.0;
        for v in points {
            let gv = g.eval(v);
            let mv = sqrt_maxwellian(v, n);
            let mut acc = 0.0;
            self.sweep(v, |j, _vs, vp, _vsp, w| {
                let ms = self.m_grid[j];
                let msp = ms * mv / sqrt_maxwellian(vp, n);
                let d = g.eval(vp) - gv;
                acc += w * d * d * msp * ms;
            });
            total += self.params.weight_pow(v, ell) * acc;
        }
        0.5 * total * hn
    }

    /// `|g|²_{B_ℓ}` over the whole grid.
    pub fn b_seminorm_sq<G: Field>(&self, g: &G, ell: f64) -> f64 {
        self.b_seminorm_sq_over(g, ell, &self.grid.nodes())
    }

    /// Entropy `H = −∫ F log F` and production
    /// `D = ¼ ∫∫∫ B (F'F'_* − FF_*) log(F'F'_*/(FF_*))`.
    pub fn entropy<F: Field>(&self, big_f: &F) -> Result<(f64, f64)> {
        let nodes = self.grid.nodes();
        let fvals: Vec<f64> = nodes.iter().map(|v| big_f.eval(v)).collect();
        if let Some(bad) = fvals.iter().position(|x| !(*x > 0.0)) {
            return Err(Error::Domain(format!("F must be positive; F = {} at node {bad}", fvals[bad])));
        }
        let hn = self.grid.cell_volume();
        let h_fun = -fvals.iter().map(|f| f * f.ln()).sum::<f64>() * hn;
        let mut d = 0.0;
        let mut bad_point = None;
        for (i, v) in nodes.iter().enumerate() {
            let fv = fvals[i];
            let mut acc = 0.0;
            self.sweep(v, |j, _vs, vp, vsp, w| {
                let fp = big_f.eval(vp);
                let fsp = big_f.eval(vsp);
                if !(fp > 0.0 && fsp > 0.0) {
                    bad_point = Some(*vp);
                    return;
                }
                let a = fp * fsp;
                let b = fv * fvals[j];
                acc += w * (a - b) * (a / b).ln();
            });
            d += acc;
        }
        if let Some(p) = bad_point {
            return Err(Error::Domain(format!("F is not positive at post-collisional point {p:?}")));
        }
        Ok((h_fun, 0.25 * d * hn))
    }
}

/// `F = μ + √μ f` as a field, for a perturbation `f`.
pub struct PerturbedMaxwellian<'a, G: Field> {
    pub n: usize,
    pub f: &'a G,
}

impl<G: Field> Field for PerturbedMaxwellian<'_, G> {
    #[inline]
    fn eval(&self, v: &Vector) -> f64 {
        let m = sqrt_maxwellian(v, self.n);
        m * (m + self.f.eval(v))
    }
}

/// The exact square-root Maxwellian field for the setup's dimension.
pub fn sqrt_maxwellian_field(n: usize) -> SqrtMaxwellian {
    SqrtMaxwellian { n }
}

// ---------------------------------------------------------------------------
// Trilinear forms
// ---------------------------------------------------------------------------

/// Which representation produced a trilinear value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Sigma,
    Dual,
}

/// Value of `⟨w^{2ℓ}Γ(g,h), f⟩` with provenance and an error estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrilinearReport {
    pub value: f64,
    pub representation: Representation,
    pub resolution: String,
    pub error_estimate: f64,
}

/// Quadrature controls for the trilinear forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrilinearQuadrature {
    /// Grid for the two outer velocity integrals.
    pub outer: VelocityGrid,
    /// Smallest deviation angle kept (both representations cut at the same angle).
    pub theta_min: f64,
    /// Gauss–Legendre nodes per dyadic band / hyperplane shell.
    pub gauss: usize,
    /// Geometric ratio of hyperplane shells.
    pub shell_ratio: f64,
    /// Azimuthal nodes (three dimensions).
    pub n_phi: usize,
    /// Pairs with `|g_* h|` (or `|g_* f'|`) below this fraction of the maximum are skipped.
    pub skip_tol: f64,
}

impl TrilinearQuadrature {
    /// Default controls: `θ_min` chosen so the discarded grazing part is below
    /// about `1e−6` of the angular mass (capped at `1e−3`), but large enough
    /// that the truncated angular mass `θ_min^{−2s}/(2s)` stays below `1e4`
    /// (beyond that, cancellation in the singular integrand loses more digits
    /// than truncation gains); three Gauss nodes per band.
    pub fn new(outer: VelocityGrid, s: f64) -> Self {
        let accuracy = (1e-6f64).powf(1.0 / (2.0 - 2.0 * s)).min(1e-3);
        let conditioning = (2.0 * s * 1e4).powf(-1.0 / (2.0 * s));
        let theta_min = accuracy.max(conditioning);
        Self { outer, theta_min, gauss: 3, shell_ratio: 1.5, n_phi: 8, skip_tol: 1e-13 }
    }

    /// Refined controls: finer outer grid with `outer_points` per axis and one
    /// more Gauss node per band; `θ_min` is kept so both resolutions
    /// approximate the same truncated form.
    pub fn refined(&self, outer_points: usize) -> Result<Self> {
        let outer = VelocityGrid::new(self.outer.n, self.outer.r_cut, outer_points)?;
        Ok(Self { outer, gauss: self.gauss + 1, ..*self })
    }

    fn describe(&self) -> String {
        format!(
            "outer {}^{} h={:.4} theta_min={:.2e} gauss={}",
            self.outer.points_per_axis, self.outer.n, self.outer.h, self.theta_min, self.gauss
        )
    }
}

/// Window of dyadic indices `k` whose scale `2^{−k}` is resolvable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicWindow {
    pub k_min: i32,
    pub k_max: i32,
}

impl DyadicWindow {
    /// Grid-resolvable window: `2^{−k_max} ≥ 2h`, `2^{−k_min} ≤ 2 r_cut`.
    pub fn for_grid(grid: &VelocityGrid) -> Self {
        Self { k_min: -(2.0 * grid.r_cut).log2().floor() as i32, k_max: -(2.0 * grid.h).log2().ceil() as i32 }
    }

    /// Window for inputs given as analytic fields: post-collisional values are
    /// evaluated exactly, so the band scale is limited only by the angular
    /// truncation of `q` (bands above `2^{−k} ≈ r_cut·θ_min` are empty anyway).
    pub fn for_fields<G: Field, H: Field, F: Field>(q: &TrilinearQuadrature, g: &G, h: &H, f: &F) -> Self {
        let grid_window = Self::for_grid(&q.outer);
        if g.resolution().is_some() || h.resolution().is_some() || f.resolution().is_some() {
            return grid_window;
        }
        let k_max = -(q.outer.r_cut * 0.5 * q.theta_min).log2().ceil() as i32;
        Self { k_min: grid_window.k_min, k_max: k_max.max(grid_window.k_max) }
    }

    /// Whether `k` lies in the window.
    pub fn contains(&self, k: i32) -> bool {
        k >= self.k_min && k <= self.k_max
    }
}

/// Dyadic pieces of the trilinear form for one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TPieces {
    pub k: i32,
    pub t_plus: f64,
    pub t_minus: f64,
    pub t_star: f64,
}

/// Angular nodes (paired) of the band `|v − v'| ∈ [lo, hi)` for relative speed
/// `ρ`: returns `(θ, dθ-weight)` pairs for the positive half; the caller adds
/// the reflected node.
#[inline]
fn band_nodes(rho: f64, lo: f64, hi: f64, gauss: &[(f64, f64)], out: &mut Vec<(f64, f64)>) {
    // r = ρ sin(θ/2), dθ = 2 dr / sqrt(ρ² − r²).
    let (c, hw) = (0.5 * (hi + lo), 0.5 * (hi - lo));
    for &(x, w) in gauss {
        let r = c + hw * x;
        let theta = 2.0 * (r / rho).asin();
        out.push((theta, hw * w * 2.0 / (rho * rho - r * r).sqrt()));
    }
}

/// Precomputed values of the three input fields on the outer grid.
struct Sampled {
    nodes: Vec<Vector>,
    g: Vec<f64>,
    h: Vec<f64>,
    f: Vec<f64>,
    m: Vec<f64>,
    w: Vec<f64>,
}

impl Sampled {
    fn new<G: Field, H: Field, F: Field>(params: &KernelParams, grid: &VelocityGrid, g: &G, h: &H, f: &F, ell: f64) -> Self {
        let nodes = grid.nodes();
        Self {
            g: nodes.iter().map(|v| g.eval(v)).collect(),
            h: nodes.iter().map(|v| h.eval(v)).collect(),
            f: nodes.iter().map(|v| f.eval(v)).collect(),
            m: nodes.iter().map(|v| sqrt_maxwellian(v, grid.n)).collect(),
            w: nodes.iter().map(|v| params.weight_pow(v, ell)).collect(),
            nodes,
        }
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Visits the paired angular nodes of one `(v, v_*)` pair for the dyadic bands
/// `k ∈ [k_lo, k_hi]` clipped to `θ ≥ θ_min`: `f(k, σ, weight)` with `weight`
/// containing `Φ · b · dσ`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn sigma_band_sweep<F: FnMut(i32, &Vector, f64)>(
    params: &KernelParams,
    q: &TrilinearQuadrature,
    gauss: &[(f64, f64)],
    v: &Vector,
    vs: &Vector,
    k_range: Option<(i32, i32)>,
    scratch: &mut Vec<(f64, f64)>,
    mut f: F,
) {
    let n = params.n;
    let u = sub(v, vs);
    let rho = norm(&u);
    if rho < 1e-12 {
        return;
    }
    let kdir = scale(1.0 / rho, &u);
    let (e1, e2) = transverse_frame(n, &kdir);
    let phi = params.phi(rho);
    let r_hi = rho * std::f64::consts::FRAC_PI_4.sin();
    let r_lo = rho * (0.5 * q.theta_min).sin();
    let k_first = DyadicCutoff::index_of(r_hi);
    let k_last = DyadicCutoff::index_of(r_lo);
    let (ka, kb) = match k_range {
        Some((a, b)) => (a.max(k_first), b.min(k_last)),
        None => (k_first, k_last),
    };
    let nphi = q.n_phi.max(2);
    for k in ka..=kb {
        let (blo, bhi) = DyadicCutoff { k }.support();
        let lo = blo.max(r_lo);
        let hi = bhi.min(r_hi);
        if hi <= lo {
            continue;
        }
        scratch.clear();
        band_nodes(rho, lo, hi, gauss, scratch);
        for &(theta, wt) in scratch.iter() {
            let b = params.b_of_theta(theta);
            let (ct, st) = (theta.cos(), theta.sin());
            if n == 2 {
                let w = phi * b * wt;
                for sgn in [1.0, -1.0] {
                    let sigma = axpy(&scale(ct, &kdir), sgn * st, &e1);
                    f(k, &sigma, w);
                }
            } else {
                let dphi = 2.0 * std::f64::consts::PI / nphi as f64;
                let w = phi * b * wt * st * dphi;
                for jp in 0..nphi {
                    let ph = (jp as f64 + 0.5) * dphi;
                    let sigma = axpy(&axpy(&scale(ct, &kdir), st * ph.cos(), &e1), st * ph.sin(), &e2);
                    f(k, &sigma, w);
                }
            }
        }
    }
}

/// `⟨w^{2ℓ}Γ(g,h), f⟩ = Σ_k (T_+^{k,ℓ} − T_−^{k,ℓ})` in the σ-representation,
/// with the dyadic bands integrated by Gauss–Legendre in `r = |v − v'|`.
#[allow(clippy::too_many_arguments)]
pub fn trilinear_sigma<G: Field, H: Field, F: Field>(
    g: &G,
    h: &H,
    f: &F,
    ell: f64,
    params: &KernelParams,
    q: &TrilinearQuadrature,
) -> Result<TrilinearReport> {
    params.validate()?;
    let grid = q.outer;
    let s = Sampled::new(params, &grid, g, h, f, ell);
    let gauss = gauss_legendre_on(q.gauss, -1.0, 1.0);
    let gmax = max_abs(&s.g) * max_abs(&s.h);
    let cut = q.skip_tol * gmax;
    let hn2 = grid.cell_volume().powi(2);
    let mut total = 0.0;
    let mut band_totals: std::collections::BTreeMap<i32, f64> = Default::default();
    let mut scratch = Vec::new();
    for (i, v) in s.nodes.iter().enumerate() {
        if s.h[i] == 0.0 {
            continue;
        }
        let loss = s.f[i] * s.w[i];
        for (j, vs) in s.nodes.iter().enumerate() {
            let gh = s.g[j] * s.h[i];
            if gh.abs() <= cut {
                continue;
            }
            let ms = s.m[j];
            let mid = scale(0.5, &add(v, vs));
            let hr = 0.5 * norm(&sub(v, vs));
            sigma_band_sweep(params, q, &gauss, v, vs, None, &mut scratch, |k, sigma, w| {
                let vp = axpy(&mid, hr, sigma);
                let vsp = axpy(&mid, -hr, sigma);
                let gain = sqrt_maxwellian(&vsp, grid.n) * f.eval(&vp) * params.weight_pow(&vp, ell);
                let c = w * gh * (gain - ms * loss);
                total += c;
                *band_totals.entry(k).or_insert(0.0) += c;
            });
        }
    }
    total *= hn2;
    // Tail below θ_min: geometric continuation of the finest band.
    let tail = band_totals.values().next_back().map(|x| x.abs() * hn2).unwrap_or(0.0);
    Ok(TrilinearReport { value: total, representation: Representation::Sigma, resolution: q.describe(), error_estimate: tail })
}

/// Mean-zero regularised angular kernel `b_ε`: `b` truncated to `θ ≥ θ_min`
/// minus a constant on the cap `t = cos θ ∈ [1 − ε, 1]`, `ε = 1 − cos θ_min`,
/// chosen so that `∫_{−1}^{1} b_ε(t)(1−t²)^{(n−3)/2} dt = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedB {
    pub params: KernelParams,
    pub theta_min: f64,
    /// Height of the compensating cap (`b_ε = −cap_height` on the cap).
    pub cap_height: f64,
}

impl RegularizedB {
    pub fn new(params: KernelParams, theta_min: f64) -> Self {
        let mass = params.truncated_b_moment(theta_min);
        let cap = cap_measure(params.n, theta_min);
        Self { params, theta_min, cap_height: mass / cap }
    }

    /// `ε = 1 − cos θ_min`.
    pub fn epsilon(&self) -> f64 {
        1.0 - self.theta_min.cos()
    }

    /// `b_ε` as a function of the deviation angle.
    #[inline]
    pub fn of_theta(&self, theta: f64) -> f64 {
        if theta < self.theta_min {
            -self.cap_height
        } else {
            self.params.b_of_theta(theta)
        }
    }

    /// `b_ε(t)`.
    pub fn of_cos(&self, t: f64) -> f64 {
        self.of_theta(t.clamp(-1.0, 1.0).acos())
    }

    /// Quadrature value of `∫_{−1}^{1} b_ε(t)(1−t²)^{(n−3)/2} dt`, computed in the
    /// angle variable with composite Gauss–Legendre on geometric cells.
    pub fn moment(&self) -> f64 {
        let n = self.params.n;
        let sin_pow = |th: f64| if n == 2 { 1.0 } else { th.sin().powi(n as i32 - 2) };
        let mut pos = 0.0;
        let mut hi = std::f64::consts::FRAC_PI_2;
        while hi > self.theta_min {
            let lo = (hi * 0.5).max(self.theta_min);
            for (th, w) in gauss_legendre_on(20, lo, hi) {
                pos += w * self.params.b_of_theta(th) * sin_pow(th);
            }
            hi = lo;
        }
        let mut neg = 0.0;
        for (th, w) in gauss_legendre_on(20, 0.0, self.theta_min) {
            neg += w * self.cap_height * sin_pow(th);
        }
        pos - neg
    }
}

/// `∫_0^{θ_min} sin^{n−2}θ dθ`.
fn cap_measure(n: usize, theta_min: f64) -> f64 {
    match n {
        2 => theta_min,
        3 => 1.0 - theta_min.cos(),
        _ => gauss_legendre_on(20, 0.0, theta_min).iter().map(|(t, w)| w * t.sin().powi(n as i32 - 2)).sum(),
    }
}

/// Relative hyperplane rule for Carleman integrals with apex `v'` and anchor
/// `v_*`: offsets `z = ρ ζ` with `ρ = |v' − v_*|`; the deviation angle obeys
/// `tan(θ/2) = |ζ|`.  Entries are `(ζ, θ, weight in ζ-measure)`.
fn relative_plane_rule(n: usize, q: &TrilinearQuadrature, zeta_min: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let radial_w = |zeta: f64| if n == 2 { 1.0 } else { zeta };
    let mut hi = 1.0;
    while hi > zeta_min {
        let lo = (hi / q.shell_ratio).max(zeta_min);
        for (z, w) in gauss_legendre_on(q.gauss, lo, hi) {
            out.push((z, 2.0 * z.atan(), w * radial_w(z)));
        }
        hi = lo;
    }
    // Compensating cap 0 ≤ ζ < ζ_min.
    for (z, w) in gauss_legendre_on(q.gauss.max(2), 0.0, zeta_min) {
        out.push((z, 2.0 * z.atan(), w * radial_w(z)));
    }
    out
}

/// Visits the hyperplane nodes `v` of `E_{v_*}^{v'}` for one `(v', v_*)` pair:
/// `f(v, |v − v_*|, θ, weight)` where `weight` is the Lebesgue weight `dπ_v`.
#[inline]
fn plane_sweep<F: FnMut(&Vector, f64, f64, f64)>(
    n: usize,
    n_phi: usize,
    rel: &[(f64, f64, f64)],
    vp: &Vector,
    vs: &Vector,
    mut f: F,
) {
    let normal = sub(vp, vs);
    let rho = norm(&normal);
    if rho < 1e-12 {
        return;
    }
    let kdir = scale(1.0 / rho, &normal);
    let (e1, e2) = transverse_frame(n, &kdir);
    let rho_n1 = rho.powi(n as i32 - 1);
    for &(zeta, theta, w) in rel {
        let z = rho * zeta;
        let dist = rho * (1.0 + zeta * zeta).sqrt();
        if n == 2 {
            for sgn in [1.0, -1.0] {
                let v = axpy(vp, sgn * z, &e1);
                f(&v, dist, theta, w * rho_n1);
            }
        } else {
            let m = n_phi.max(2);
            let dphi = 2.0 * std::f64::consts::PI / m as f64;
            for jp in 0..m {
                let ph = (jp as f64 + 0.5) * dphi;
                let dir = axpy(&scale(ph.cos(), &e1), ph.sin(), &e2);
                let v = axpy(vp, z, &dir);
                f(&v, dist, theta, w * rho_n1 * dphi);
            }
        }
    }
}

/// `B̃ = 2^{n−1} Φ(|v − v_*|) b(cos θ) / (|v' − v_*| |v − v_*|^{n−2})` with a
/// given angular factor value.
#[inline(always)]
fn b_tilde(params: &KernelParams, b: f64, rho: f64, dist: f64) -> f64 {
    let n = params.n;
    let pre = if n == 2 { 2.0 } else { 4.0 / dist };
    pre * params.phi(dist) * b / rho
}

/// `⟨w^{2ℓ}Γ(g,h), f⟩` in the dual (Carleman) representation
/// `∫dv'∫dv_*∫_{E} dπ_v B̃ g_* f' w^{2ℓ}(v') (M'_* h − M_* h') + Γ_*^ℓ`,
/// evaluated with the mean-zero kernel `b_ε` (`ε = 1 − cos θ_min`).
#[allow(clippy::too_many_arguments)]
pub fn trilinear_dual<G: Field, H: Field, F: Field>(
    g: &G,
    h: &H,
    f: &F,
    ell: f64,
    params: &KernelParams,
    q: &TrilinearQuadrature,
) -> Result<TrilinearReport> {
    params.validate()?;
    let n = params.n;
    let grid = q.outer;
    let s = Sampled::new(params, &grid, g, h, f, ell);
    let breg = RegularizedB::new(*params, q.theta_min);
    let zeta_min = (0.5 * q.theta_min).tan();
    let rel = relative_plane_rule(n, q, zeta_min);
    let bvals: Vec<f64> = rel.iter().map(|&(_, th, _)| breg.of_theta(th)).collect();
    let gmax = max_abs(&s.g) * max_abs(&s.f).max(max_abs(&s.h));
    let cut = q.skip_tol * gmax;
    let hn2 = grid.cell_volume().powi(2);
    let npg = n as f64 + params.gamma;
    let per_node = if n == 2 { 2 } else { q.n_phi.max(2) };
    // Contribution of one `(v', v_*)` pair: `(main, Γ_* part, cap part)`.
    let pair = |vp: &Vector, hp: f64, vs: &Vector, ms: f64| -> (f64, f64, f64) {
        let rho = norm(&sub(vp, vs));
        let mut idx = 0usize;
        let (mut acc_main, mut acc_star, mut acc_cap) = (0.0, 0.0, 0.0);
        plane_sweep(n, q.n_phi, &rel, vp, vs, |v, dist, theta, w| {
            let b = bvals[idx / per_node];
            idx += 1;
            let bt = b_tilde(params, b, rho, dist) * w;
            let vsp = sub(&add(v, vs), vp);
            let c_main = bt * (sqrt_maxwellian(&vsp, n) * h.eval(v) - ms * hp);
            if theta < q.theta_min {
                acc_cap += c_main;
            }
            acc_main += c_main;
            acc_star += bt * (1.0 - (rho / dist).powf(npg));
        });
        (acc_main, acc_star * ms * hp, acc_cap)
    };
    // The diagonal cell `v_* ≈ v'` is averaged over an even-order tensor Gauss
    // rule inside the cell, which never hits the removable point `v_* = v'`.
    let cell_rule: Vec<(Vector, f64)> = {
        let g1 = gauss_legendre_on(4, -0.5 * grid.h, 0.5 * grid.h);
        let mut out = vec![([0.0; 3], 1.0)];
        for axis in 0..n {
            out = out
                .iter()
                .flat_map(|(o, w)| {
                    g1.iter().map(move |&(x, wx)| {
                        let mut o2 = *o;
                        o2[axis] = x;
                        (o2, w * wx / grid.h)
                    })
                })
                .collect();
        }
        out
    };
    let mut main = 0.0;
    let mut gstar = 0.0;
    let mut cap_part = 0.0;
    for (i, vp) in s.nodes.iter().enumerate() {
        let fw = s.f[i] * s.w[i];
        if fw == 0.0 {
            continue;
        }
        let hp = s.h[i];
        for (j, vs) in s.nodes.iter().enumerate() {
            if i == j {
                for (o, cw) in &cell_rule {
                    let vsub = add(vs, o);
                    let (a, b, c) = pair(vp, hp, &vsub, sqrt_maxwellian(&vsub, n));
                    let gw = g.eval(&vsub) * fw * cw;
                    main += gw * a;
                    gstar += gw * b;
                    cap_part += gw * c;
                }
                continue;
            }
            let gf = s.g[j] * fw;
            if gf.abs() <= cut {
                continue;
            }
            let (a, b, c) = pair(vp, hp, vs, s.m[j]);
            main += gf * a;
            gstar += gf * b;
            cap_part += gf * c;
        }
    }
    Ok(TrilinearReport {
        value: (main + gstar) * hn2,
        representation: Representation::Dual,
        resolution: q.describe(),
        error_estimate: cap_part.abs() * hn2,
    })
}

/// Dyadic pieces `T_+^{k,ℓ}`, `T_−^{k,ℓ}` (σ-representation) and `T_*^{k,ℓ}`
/// (Carleman representation with `|v − v'| = |z|` on the hyperplane).
#[allow(clippy::too_many_arguments)]
pub fn t_pieces<G: Field, H: Field, F: Field>(
    k: i32,
    window: &DyadicWindow,
    ell: f64,
    g: &G,
    h: &H,
    f: &F,
    params: &KernelParams,
    q: &TrilinearQuadrature,
) -> Result<TPieces> {
    if !window.contains(k) {
        return Err(Error::Refused(format!(
            "dyadic index k = {k} outside the resolvable window [{}, {}]",
            window.k_min, window.k_max
        )));
    }
    let n = params.n;
    let grid = q.outer;
    let s = Sampled::new(params, &grid, g, h, f, ell);
    let gauss = gauss_legendre_on(q.gauss + 2, -1.0, 1.0);
    let hn2 = grid.cell_volume().powi(2);
    let mut scratch = Vec::new();
    let (mut tp, mut tm) = (0.0, 0.0);
    for (i, v) in s.nodes.iter().enumerate() {
        for (j, vs) in s.nodes.iter().enumerate() {
            let gh = s.g[j] * s.h[i];
            if gh == 0.0 {
                continue;
            }
            let mid = scale(0.5, &add(v, vs));
            let hr = 0.5 * norm(&sub(v, vs));
            sigma_band_sweep(params, q, &gauss, v, vs, Some((k, k)), &mut scratch, |_, sigma, w| {
                let vp = axpy(&mid, hr, sigma);
                let vsp = axpy(&mid, -hr, sigma);
                tp += w * gh * sqrt_maxwellian(&vsp, n) * f.eval(&vp) * params.weight_pow(&vp, ell);
                tm += w * gh * s.m[j] * s.f[i] * s.w[i];
            });
        }
    }
    // T_*: hyperplane through v' normal to v_* − v', restricted to |z| ∈ [2^{−k−1}, 2^{−k}).
    let (zlo, zhi) = DyadicCutoff { k }.support();
    let mut ts = 0.0;
    for (i, vp) in s.nodes.iter().enumerate() {
        let fw = s.f[i] * s.w[i] * s.h[i];
        if fw == 0.0 {
            continue;
        }
        for (j, vs) in s.nodes.iter().enumerate() {
            let coef = s.g[j] * s.m[j] * fw;
            if coef == 0.0 {
                continue;
            }
            let rho = norm(&sub(vp, vs));
            if rho < 1e-12 {
                continue;
            }
            // Support of b: |z| ≤ ρ; cut at θ_min as elsewhere.
            let lo = zlo.max(rho * (0.5 * q.theta_min).tan());
            let hi = zhi.min(rho);
            if hi <= lo {
                continue;
            }
            for (z, w) in gauss_legendre_on(q.gauss + 2, lo, hi) {
                let dist = (rho * rho + z * z).sqrt();
                let theta = 2.0 * (z / rho).atan();
                let bt = b_tilde(params, params.b_of_theta(theta), rho, dist);
                let meas = if n == 2 { 2.0 * w } else { 2.0 * std::f64::consts::PI * z * w };
                ts += coef * bt * meas;
            }
        }
    }
    Ok(TPieces { k, t_plus: tp * hn2, t_minus: tm * hn2, t_star: ts * hn2 })
}

// ---------------------------------------------------------------------------
// Carleman kernel of the semi-norm
// ---------------------------------------------------------------------------

/// Quadrature controls for [`carleman_k`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanRule {
    /// Gauss–Legendre nodes per unit-length shell.
    pub gauss: usize,
    /// Shell width.
    pub shell: f64,
    /// The integrand is negligible beyond this distance from the hyperplane foot.
    pub z_max: f64,
    /// Azimuthal nodes (three dimensions).
    pub n_phi: usize,
}

impl Default for CarlemanRule {
    fn default() -> Self {
        Self { gauss: 8, shell: 0.5, z_max: 14.0, n_phi: 32 }
    }
}

/// Carleman kernel
/// `K(v,v') = 2^{n−1} ∫_{E_{v'}^{v}} dπ_{v'_*} M_* M'_* B(2v − v' − v'_*, σ) / (|v−v'| |v'−v'_*|^{n−2})`
/// with `σ = (v' − v'_*)/|v' − v'_*|`, `M_* = M(v'_* + v' − v)`, `M'_* = M(v'_*)`,
/// on the hyperplane `E = {v'_* : ⟨v' − v, v'_* − v⟩ = 0}`.
pub fn carleman_k(v: &Vector, vp: &Vector, params: &KernelParams, rule: &CarlemanRule) -> Result<f64> {
    let n = params.n;
    let d = sub(vp, v);
    let a = norm(&d);
    if a == 0.0 {
        return Err(Error::Singular("K(v, v') is singular at v = v'".into()));
    }
    let basis = orthogonal_complement(n, &d)?;
    // Foot of the hyperplane is v itself; offsets z ⊥ d.  Support of b:
    // |v − v'_*| ≥ |v − v'|, i.e. |z| ≥ a.  The Gaussian factors decay once
    // |z| exceeds the distance of v, v' from the origin by a few units.
    let z_end = a + rule.z_max + norm(v).max(norm(vp));
    let mut radial = Vec::new();
    let mut lo = a;
    while lo < z_end {
        let hi = (lo + rule.shell).min(z_end);
        radial.extend(gauss_legendre_on(rule.gauss, lo, hi));
        lo = hi;
    }
    let c = crate::kernel::sqrt_maxwellian_const(n);
    let mut acc = 0.0;
    let mut visit = |z: &Vector, w: f64| {
        let vsp = add(v, z);
        let vstar = add(&vsp, &d);
        let big_u = sub(&sub(&scale(2.0, v), vp), &vsp);
        let sig = sub(vp, &vsp);
        let len = norm(&sig);
        let cos = dot(&big_u, &sig) / (norm(&big_u) * len);
        let b = params.angular_b(cos);
        if b == 0.0 || !b.is_finite() {
            return;
        }
        let mm = c * c * (-0.25 * (norm2(&vstar) + norm2(&vsp))).exp();
        let denom = a * if n == 2 { 1.0 } else { len.powi(n as i32 - 2) };
        acc += w * mm * params.phi(norm(&big_u)) * b / denom;
    };
    if n == 2 {
        let e = basis[0];
        for &(r, w) in &radial {
            visit(&scale(r, &e), w);
            visit(&scale(-r, &e), w);
        }
    } else {
        let m = rule.n_phi.max(2);
        let dphi = 2.0 * std::f64::consts::PI / m as f64;
        for &(r, w) in &radial {
            for jp in 0..m {
                let ph = (jp as f64 + 0.5) * dphi;
                let dir = axpy(&scale(ph.cos(), &basis[0]), ph.sin(), &basis[1]);
                visit(&scale(r, &dir), w * r * dphi);
            }
        }
    }
    Ok(2f64.powi(n as i32 - 1) * acc)
}

/// `∫∫ K(v,v') (g(v') − g(v))²` with `v` on `points`, `v'` on polar shells around `v`
/// (radius up to `r_max`, `n_r` Gauss nodes per unit shell, `n_ang` directions).
#[allow(clippy::too_many_arguments)]
pub fn carleman_form<G: Field>(
    g: &G,
    params: &KernelParams,
    points: &[Vector],
    cell_volume: f64,
    r_max: f64,
    n_r: usize,
    n_ang: usize,
    rule: &CarlemanRule,
) -> Result<f64> {
    if params.n != 2 {
        return Err(Error::Domain("carleman_form is implemented for n = 2".into()));
    }
    // Geometric shells toward the diagonal handle the |v−v'|^{−n−2s} singularity.
    let mut radial = Vec::new();
    let mut hi = r_max;
    while hi > 1e-4 {
        let lo = if hi > 1.0 { (hi - 1.0).max(1.0) } else { hi / 2.0 };
        radial.extend(gauss_legendre_on(n_r, lo, hi));
        hi = lo;
    }
    let dphi = 2.0 * std::f64::consts::PI / n_ang as f64;
    let mut total = 0.0;
    for v in points {
        let gv = g.eval(v);
        let mut acc = 0.0;
        for &(r, w) in &radial {
            for j in 0..n_ang {
                let ph = (j as f64 + 0.5) * dphi;
                let vp = [v[0] + r * ph.cos(), v[1] + r * ph.sin(), 0.0];
                let dg = g.eval(&vp) - gv;
                if dg == 0.0 {
                    continue;
                }
                acc += w * r * dphi * carleman_k(v, &vp, params, rule)? * dg * dg;
            }
        }
        total += acc;
    }
    Ok(total * cell_volume)
}
