//! Velocity grids, sampled fields with a C¹ cubic interpolant, graded
//! angular rules on the sphere, Gauss–Legendre rules and a Richardson-type
//! convergence probe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axpy, dot, orthogonal_complement, scale, Vector};

/// Gauss–Legendre nodes and weights on `[−1, 1]` (Newton iteration on `P_m`).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = mf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        // Recompute the derivative at the converged node.
        let (mut p0, mut p1) = (1.0, 0.0);
        for j in 0..m {
            let p2 = p1;
            p1 = p0;
            p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
        }
        if (z * z - 1.0).abs() > 0.0 {
            dp = mf * (z * p0 - p1) / (z * z - 1.0);
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(m: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(m);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(&w).map(|(xi, wi)| (c + h * xi, h * wi)).collect()
}

/// Truncated tensor velocity grid `[−r_cut, r_cut]^n` with cell-centred nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub n: usize,
    pub r_cut: f64,
    pub points_per_axis: usize,
    /// Spacing `h = 2 r_cut / points_per_axis`.
    pub h: f64,
}

impl VelocityGrid {
    /// Validated constructor (even number of points per axis, `n ∈ {2, 3}`).
    pub fn new(n: usize, r_cut: f64, points_per_axis: usize) -> Result<Self> {
        if !(2..=3).contains(&n) {
            return Err(Error::Domain(format!("grid dimension {n} not supported")));
        }
        if points_per_axis < 2 || points_per_axis % 2 != 0 {
            return Err(Error::Domain(format!("points_per_axis = {points_per_axis} must be even and ≥ 2")));
        }
        if !(r_cut > 0.0) || !r_cut.is_finite() {
            return Err(Error::Domain(format!("r_cut = {r_cut} must be positive")));
        }
        Ok(Self { n, r_cut, points_per_axis, h: 2.0 * r_cut / points_per_axis as f64 })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.n as u32)
    }

    /// Always false (grids have at least `2^n` nodes).
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    /// Coordinate of index `i` along one axis.
    #[inline(always)]
    pub fn coord(&self, i: usize) -> f64 {
        -self.r_cut + (i as f64 + 0.5) * self.h
    }

    /// Node with flat index `idx` (first axis slowest).
    #[inline]
    pub fn node(&self, idx: usize) -> Vector {
        let p = self.points_per_axis;
        match self.n {
            2 => [self.coord(idx / p), self.coord(idx % p), 0.0],
            _ => [self.coord(idx / (p * p)), self.coord((idx / p) % p), self.coord(idx % p)],
        }
    }

    /// All nodes in flat order.
    pub fn nodes(&self) -> Vec<Vector> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Flat index of the multi-index `(i, j[, k])`.
    #[inline(always)]
    pub fn flat(&self, m: &[usize]) -> usize {
        let p = self.points_per_axis;
        match self.n {
            2 => m[0] * p + m[1],
            _ => (m[0] * p + m[1]) * p + m[2],
        }
    }

    /// Multi-index of a flat index.
    pub fn multi(&self, idx: usize) -> [usize; 3] {
        let p = self.points_per_axis;
        match self.n {
            2 => [idx / p, idx % p, 0],
            _ => [idx / (p * p), (idx / p) % p, idx % p],
        }
    }

    /// Samples a function on the grid.
    pub fn sample<F: Fn(&Vector) -> f64>(&self, f: F) -> ScalarField {
        ScalarField { grid: *self, values: (0..self.len()).map(|i| f(&self.node(i))).collect() }
    }

    /// Same box, refined by an integer factor.
    pub fn refined(&self, factor: usize) -> Self {
        Self::new(self.n, self.r_cut, self.points_per_axis * factor).expect("refinement of a valid grid")
    }

    /// Interpolation stencil at `x`: up to `4^n` (index, weight) pairs of the
    /// tensor Catmull–Rom interpolant; nodes outside the grid are dropped
    /// (zero extension).  Returns the number of entries written.
    #[inline]
    pub fn stencil(&self, x: &Vector, idx: &mut [usize; 64], wts: &mut [f64; 64]) -> usize {
        let p = self.points_per_axis as isize;
        let mut base = [0isize; 3];
        let mut w1 = [[0.0f64; 4]; 3];
        for d in 0..self.n {
            let t = (x[d] + self.r_cut) / self.h - 0.5;
            let i0 = t.floor();
            let u = t - i0;
            base[d] = i0 as isize - 1;
            w1[d] = keys_weights(u);
        }
        let mut cnt = 0;
        if self.n == 2 {
            for a in 0..4 {
                let ia = base[0] + a as isize;
                if ia < 0 || ia >= p {
                    continue;
                }
                for b in 0..4 {
                    let ib = base[1] + b as isize;
                    if ib < 0 || ib >= p {
                        continue;
                    }
                    idx[cnt] = (ia * p + ib) as usize;
                    wts[cnt] = w1[0][a] * w1[1][b];
                    cnt += 1;
                }
            }
        } else {
            for a in 0..4 {
                let ia = base[0] + a as isize;
                if ia < 0 || ia >= p {
                    continue;
                }
                for b in 0..4 {
                    let ib = base[1] + b as isize;
                    if ib < 0 || ib >= p {
                        continue;
                    }
                    for c in 0..4 {
                        let ic = base[2] + c as isize;
                        if ic < 0 || ic >= p {
                            continue;
                        }
                        idx[cnt] = ((ia * p + ib) * p + ic) as usize;
                        wts[cnt] = w1[0][a] * w1[1][b] * w1[2][c];
                        cnt += 1;
                    }
                }
            }
        }
        cnt
    }
}

/// Catmull–Rom (Keys, `a = −1/2`) weights for the nodes `i−1, i, i+1, i+2`
/// at fractional offset `u ∈ [0, 1)`.
#[inline(always)]
fn keys_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        0.5 * (-u3 + 2.0 * u2 - u),
        0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
        0.5 * (-3.0 * u3 + 4.0 * u2 + u),
        0.5 * (u3 - u2),
    ]
}

/// Anything that can be evaluated at an arbitrary velocity.
pub trait Field: Sync {
    fn eval(&self, v: &Vector) -> f64;

    /// Spacing of the underlying samples, `None` for fields known everywhere.
    fn resolution(&self) -> Option<f64> {
        None
    }
}

/// A closure promoted to a [`Field`].
pub struct FnField<F: Fn(&Vector) -> f64 + Sync>(pub F);

impl<F: Fn(&Vector) -> f64 + Sync> Field for FnField<F> {
    #[inline(always)]
    fn eval(&self, v: &Vector) -> f64 {
        (self.0)(v)
    }
}

/// The square-root Maxwellian `M` as an exact field.
#[derive(Debug, Clone, Copy)]
pub struct SqrtMaxwellian {
    pub n: usize,
}

impl Field for SqrtMaxwellian {
    #[inline(always)]
    fn eval(&self, v: &Vector) -> f64 {
        crate::kernel::sqrt_maxwellian(v, self.n)
    }
}

/// `∂_β M` as an exact field (order at most two, checked at construction).
#[derive(Debug, Clone)]
pub struct MaxwellianDerivative {
    pub n: usize,
    pub beta: Vec<usize>,
}

impl MaxwellianDerivative {
    pub fn new(n: usize, beta: &[usize]) -> Result<Self> {
        crate::kernel::m_beta(&[0.0; 3], n, beta)?;
        Ok(Self { n, beta: beta.to_vec() })
    }
}

impl Field for MaxwellianDerivative {
    fn eval(&self, v: &Vector) -> f64 {
        crate::kernel::m_beta(v, self.n, &self.beta).unwrap_or(0.0)
    }
}

impl<T: Field + ?Sized> Field for &T {
    #[inline(always)]
    fn eval(&self, v: &Vector) -> f64 {
        (**self).eval(v)
    }

    fn resolution(&self) -> Option<f64> {
        (**self).resolution()
    }
}

/// Real values sampled on a [`VelocityGrid`]; evaluation between nodes uses the
/// tensor Catmull–Rom interpolant (C¹, exact for quadratics, zero outside the box).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: VelocityGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    /// Wraps values, checking length and finiteness.
    pub fn new(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!("field has {} values, grid has {}", values.len(), grid.len())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite field value".into()));
        }
        Ok(Self { grid, values })
    }

    /// The zero field.
    pub fn zeros(grid: VelocityGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    /// Grid inner product `Σ f g hⁿ`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    /// Discrete `L²` norm.
    pub fn l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Pointwise linear combination `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    /// `c · self`.
    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|x| c * x).collect() }
    }
}

impl Field for ScalarField {
    fn resolution(&self) -> Option<f64> {
        Some(self.grid.h)
    }

    #[inline]
    fn eval(&self, v: &Vector) -> f64 {
        let mut idx = [0usize; 64];
        let mut w = [0.0f64; 64];
        let m = self.grid.stencil(v, &mut idx, &mut w);
        let mut acc = 0.0;
        for k in 0..m {
            acc += w[k] * self.values[idx[k]];
        }
        acc
    }
}

/// Tensor midpoint sum `Σ f(v_i) w(v_i) hⁿ`.
pub fn integrate(field: &ScalarField, weight: Option<&dyn Fn(&Vector) -> f64>) -> f64 {
    let g = field.grid;
    let mut acc = 0.0;
    for (i, f) in field.values.iter().enumerate() {
        acc += match weight {
            Some(w) => f * w(&g.node(i)),
            None => *f,
        };
    }
    acc * g.cell_volume()
}

/// Midpoint sum of a closure over the grid nodes.
pub fn integrate_fn<F: Fn(&Vector) -> f64>(grid: &VelocityGrid, f: F) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.len() {
        acc += f(&grid.node(i));
    }
    acc * grid.cell_volume()
}

/// Node of a [`SphereRule`], expressed in the local frame attached to the axis
/// `k`: `σ = local[0]·k + local[1]·e₁ + local[2]·e₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereNode {
    pub theta: f64,
    pub local: [f64; 3],
    pub weight: f64,
    /// Index of the node related to this one by the reflection through the axis.
    pub partner: usize,
}

/// How odd (first-order) angular contributions are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensation {
    /// One-sided rule doubled: no reflection symmetry, odd parts do not cancel.
    None,
    /// Every node is paired with its reflection through the axis, so odd
    /// components cancel exactly.
    OddPairing,
}

/// θ-graded rule on the sphere cap `{θ ≤ θ_max}` around an axis.
///
/// Deviation angles sit at `θ_i = θ_max·t_i^q` with `t_i` the midpoints of `N`
/// uniform cells, and carry the exact cell measure; in three dimensions the
/// azimuth uses `n_phi` equispaced nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    pub n: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    pub q: f64,
    pub theta_max: f64,
    /// Edge of the first cell, `θ_max·N^{−q}`.
    pub theta_min: f64,
    pub nodes: Vec<SphereNode>,
}

impl SphereRule {
    /// Graded rule with `n_theta` polar cells (per side in two dimensions).
    pub fn new(n: usize, n_theta: usize, q: f64, theta_max: f64) -> Result<Self> {
        Self::with_azimuth(n, n_theta, 2 * n_theta.max(4), q, theta_max)
    }

    /// Graded rule with an explicit azimuthal resolution (three dimensions).
    pub fn with_azimuth(n: usize, n_theta: usize, n_phi: usize, q: f64, theta_max: f64) -> Result<Self> {
        if n_theta == 0 || !(q >= 1.0) || !(theta_max > 0.0 && theta_max <= std::f64::consts::PI) {
            return Err(Error::Domain("invalid sphere rule parameters".into()));
        }
        let nt = n_theta as f64;
        let edge = |i: usize| theta_max * (i as f64 / nt).powf(q);
        let mut nodes = Vec::new();
        match n {
            2 => {
                for i in 0..n_theta {
                    let th = theta_max * ((i as f64 + 0.5) / nt).powf(q);
                    let w = edge(i + 1) - edge(i);
                    let base = nodes.len();
                    nodes.push(SphereNode { theta: th, local: [th.cos(), th.sin(), 0.0], weight: w, partner: base + 1 });
                    nodes.push(SphereNode { theta: th, local: [th.cos(), -th.sin(), 0.0], weight: w, partner: base });
                }
            }
            3 => {
                if n_phi < 2 || n_phi % 2 != 0 {
                    return Err(Error::Domain("azimuthal node count must be even".into()));
                }
                let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
                for i in 0..n_theta {
                    let th = theta_max * ((i as f64 + 0.5) / nt).powf(q);
                    let cap = edge(i).cos() - edge(i + 1).cos();
                    let base = nodes.len();
                    for j in 0..n_phi {
                        let ph = (j as f64 + 0.5) * dphi;
                        let partner = base + (j + n_phi / 2) % n_phi;
                        nodes.push(SphereNode {
                            theta: th,
                            local: [th.cos(), th.sin() * ph.cos(), th.sin() * ph.sin()],
                            weight: cap * dphi,
                            partner,
                        });
                    }
                }
            }
            _ => return Err(Error::Domain(format!("sphere rule for n = {n} not supported"))),
        }
        Ok(Self { n, n_theta, n_phi, q, theta_max, theta_min: edge(1), nodes })
    }

    /// Collision rule: the cap `θ ≤ π/2` carrying the support of `b`.
    pub fn collision(n: usize, n_theta: usize) -> Result<Self> {
        Self::new(n, n_theta, 3.0, std::f64::consts::FRAC_PI_2)
    }

    /// Total weight (surface measure of the covered cap).
    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// Exact measure of the covered cap.
    pub fn cap_measure(&self) -> f64 {
        match self.n {
            2 => 2.0 * self.theta_max,
            _ => 2.0 * std::f64::consts::PI * (1.0 - self.theta_max.cos()),
        }
    }

    /// Local frame `(k, e₁, e₂)` attached to a unit axis `k`.
    #[inline]
    pub fn frame(&self, k: &Vector) -> (Vector, Vector) {
        if self.n == 2 {
            ([-k[1], k[0], 0.0], [0.0; 3])
        } else {
            let b = orthogonal_complement(3, k).expect("unit axis");
            (b[0], b[1])
        }
    }

    /// Maps a node to the sphere for axis `k` and its transverse frame.
    #[inline(always)]
    pub fn sigma(node: &SphereNode, k: &Vector, e1: &Vector, e2: &Vector) -> Vector {
        axpy(&axpy(&scale(node.local[0], k), node.local[1], e1), node.local[2], e2)
    }

    /// Node indices used under a compensation mode, with their weight multiplier.
    pub fn active_nodes(&self, compensation: Compensation) -> Vec<(usize, f64)> {
        match compensation {
            Compensation::OddPairing => (0..self.nodes.len()).map(|i| (i, 1.0)).collect(),
            Compensation::None => {
                // Keep one representative of each reflected pair, doubled.
                (0..self.nodes.len()).filter(|&i| i < self.nodes[i].partner).map(|i| (i, 2.0)).collect()
            }
        }
    }
}

/// `∫ kernel(σ) dσ` over the rule's cap around axis `k`.
pub fn sphere_integrate<F: Fn(&Vector) -> f64>(
    kernel: F,
    rule: &SphereRule,
    k: &Vector,
    compensation: Compensation,
) -> Result<f64> {
    let (e1, e2) = rule.frame(k);
    let mut acc = 0.0;
    for (i, mult) in rule.active_nodes(compensation) {
        let node = &rule.nodes[i];
        let sigma = SphereRule::sigma(node, k, &e1, &e2);
        let val = kernel(&sigma);
        if !val.is_finite() {
            return Err(Error::Accuracy(format!(
                "non-finite kernel value at node {i} (theta = {:.3e}, cos = {:.6})",
                node.theta,
                dot(&sigma, k)
            )));
        }
        acc += mult * node.weight * val;
    }
    Ok(acc)
}

/// Outcome of a two-level refinement probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsonReport {
    /// Finest value.
    pub value: f64,
    /// `|coarse − fine|` error proxy.
    pub error: f64,
    /// Richardson extrapolation assuming the observed order.
    pub extrapolated: f64,
    /// Observed convergence order (NaN when undefined).
    pub order: f64,
    /// Set when refinement is not monotonically converging.
    pub non_convergent: bool,
}

/// Evaluates `task` at levels 0, 1, 2 (each level refined by `factor`) and
/// estimates the error of the finest value.
pub fn richardson_probe<F: FnMut(usize) -> f64>(mut task: F, factor: f64) -> RichardsonReport {
    let a = task(0);
    let b = task(1);
    let c = task(2);
    let d1 = b - a;
    let d2 = c - b;
    let scale_ref = c.abs().max(1e-300);
    let tiny = 64.0 * f64::EPSILON * scale_ref;
    if d2.abs() <= tiny {
        return RichardsonReport { value: c, error: d2.abs(), extrapolated: c, order: f64::NAN, non_convergent: false };
    }
    let ratio = d1 / d2;
    let order = if ratio > 0.0 { ratio.abs().ln() / factor.ln() } else { f64::NAN };
    let non_convergent = !(ratio > 1.05) || !c.is_finite();
    let extrapolated = if non_convergent { c } else { c + d2 / (ratio - 1.0) };
    RichardsonReport { value: c, error: d2.abs(), extrapolated, order, non_convergent }
}
