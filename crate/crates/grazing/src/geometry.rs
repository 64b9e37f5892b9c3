//! Collisional kinematics, the lifted-paraboloid metric, tangent-plane lifting
//! maps, hyperplane frames for Carleman-type integrals and the straight
//! paraboloid paths used in cancellation estimates.
//!
//! Velocities are stored as `[f64; 3]`; in dimension two the third component
//! is kept at zero, which lets every formula below be written once.

use crate::error::{Error, Result};

/// A velocity vector (third component zero in two dimensions).
pub type Vector = [f64; 3];

/// Euclidean inner product.
#[inline(always)]
pub fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Squared Euclidean norm.
#[inline(always)]
pub fn norm2(a: &Vector) -> f64 {
    dot(a, a)
}

/// Euclidean norm.
#[inline(always)]
pub fn norm(a: &Vector) -> f64 {
    norm2(a).sqrt()
}

/// `a + b`.
#[inline(always)]
pub fn add(a: &Vector, b: &Vector) -> Vector {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// `a - b`.
#[inline(always)]
pub fn sub(a: &Vector, b: &Vector) -> Vector {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// `c * a`.
#[inline(always)]
pub fn scale(c: f64, a: &Vector) -> Vector {
    [c * a[0], c * a[1], c * a[2]]
}

/// `a + c * b`.
#[inline(always)]
pub fn axpy(a: &Vector, c: f64, b: &Vector) -> Vector {
    [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]]
}

/// Japanese bracket `⟨v⟩ = sqrt(1 + |v|²)`.
#[inline(always)]
pub fn bracket(v: &Vector) -> f64 {
    (1.0 + norm2(v)).sqrt()
}

/// Post-collisional velocities
/// `v' = (v+v_*)/2 + |v−v_*|σ/2`, `v'_* = (v+v_*)/2 − |v−v_*|σ/2`.
#[inline(always)]
pub fn post_collisional(v: &Vector, v_star: &Vector, sigma: &Vector) -> (Vector, Vector) {
    let r = norm(&sub(v, v_star));
    let mid = scale(0.5, &add(v, v_star));
    (axpy(&mid, 0.5 * r, sigma), axpy(&mid, -0.5 * r, sigma))
}

/// A full collision configuration with its derived quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionPair {
    pub v: Vector,
    pub v_star: Vector,
    pub sigma: Vector,
    pub v_prime: Vector,
    pub v_star_prime: Vector,
    /// Deviation angle between `k = (v−v_*)/|v−v_*|` and `σ`.
    pub theta: f64,
}

impl CollisionPair {
    /// Builds the configuration; `σ` must be a unit vector and `v ≠ v_*`.
    pub fn new(v: Vector, v_star: Vector, sigma: Vector) -> Result<Self> {
        if (norm(&sigma) - 1.0).abs() > 1e-10 {
            return Err(Error::Domain("sigma must be a unit vector".into()));
        }
        let u = sub(&v, &v_star);
        let r = norm(&u);
        if r == 0.0 {
            return Err(Error::Singular("v = v_* leaves the deviation angle undefined".into()));
        }
        let cos = (dot(&u, &sigma) / r).clamp(-1.0, 1.0);
        let (v_prime, v_star_prime) = post_collisional(&v, &v_star, &sigma);
        Ok(Self { v, v_star, sigma, v_prime, v_star_prime, theta: cos.acos() })
    }

    /// `cos θ = ⟨k, σ⟩`.
    pub fn cos_theta(&self) -> f64 {
        self.theta.cos()
    }

    /// The reverse collision: applying the collision rule to `(v', v'_*)` with
    /// `σ = (v − v_*)/|v − v_*|` recovers `(v, v_*)`.
    pub fn reversed(&self) -> Result<Self> {
        let u = sub(&self.v, &self.v_star);
        let k = scale(1.0 / norm(&u), &u);
        Self::new(self.v_prime, self.v_star_prime, k)
    }
}

/// Lifts `v` to the paraboloid: `v̲ = (v, |v|²/2)` in `ℝ^{n+1}` (returned as
/// four components, the last one being the height).
#[inline(always)]
pub fn lift(v: &Vector) -> [f64; 4] {
    [v[0], v[1], v[2], 0.5 * norm2(v)]
}

/// The anisotropic metric `d(v,v') = sqrt(|v−v'|² + ¼(|v|²−|v'|²)²)`.
#[inline(always)]
pub fn metric_d(v: &Vector, vp: &Vector) -> f64 {
    let h = 0.5 * (norm2(v) - norm2(vp));
    (norm2(&sub(v, vp)) + h * h).sqrt()
}

/// Euclidean distance of two lifted points.
pub fn lifted_distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Tangent-plane map `τ_v u = u − (1 − ⟨v⟩^{−1})⟨v,u⟩|v|^{−2} v`
/// (the identity at `v = 0`, its continuous extension).
#[inline]
pub fn tau(v: &Vector, u: &Vector) -> Vector {
    let vv = norm2(v);
    if vv == 0.0 {
        return *u;
    }
    let c = (1.0 - 1.0 / (1.0 + vv).sqrt()) * dot(v, u) / vv;
    axpy(u, -c, v)
}

/// Isometric lift `I_v u = (τ_v u, ⟨v⟩^{−1}⟨v,u⟩)` onto the tangent hyperplane
/// of the paraboloid at `v̲`.
#[inline]
pub fn lift_map(v: &Vector, u: &Vector) -> [f64; 4] {
    let t = tau(v, u);
    [t[0], t[1], t[2], dot(v, u) / bracket(v)]
}

/// Both lifting maps at once.
pub fn lift_maps(v: &Vector, u: &Vector) -> (Vector, [f64; 4]) {
    (tau(v, u), lift_map(v, u))
}

/// Orthonormal basis of the orthogonal complement of `normal` inside `ℝ^n`.
///
/// Gram–Schmidt is seeded with the coordinate axes ordered by increasing
/// alignment with the normal, which makes the frame deterministic.
pub fn orthogonal_complement(n: usize, normal: &Vector) -> Result<Vec<Vector>> {
    let len = norm(normal);
    if len == 0.0 || !len.is_finite() {
        return Err(Error::Singular("degenerate frame: zero normal".into()));
    }
    let e = scale(1.0 / len, normal);
    if n == 2 {
        return Ok(vec![[-e[1], e[0], 0.0]]);
    }
    let mut axes: Vec<usize> = (0..n).collect();
    axes.sort_by(|&a, &b| e[a].abs().partial_cmp(&e[b].abs()).unwrap());
    let mut basis: Vec<Vector> = Vec::with_capacity(n - 1);
    for &ax in &axes {
        if basis.len() == n - 1 {
            break;
        }
        let mut w = [0.0; 3];
        w[ax] = 1.0;
        w = axpy(&w, -dot(&w, &e), &e);
        for b in &basis {
            w = axpy(&w, -dot(&w, b), b);
        }
        let wl = norm(&w);
        if wl > 1e-8 {
            basis.push(scale(1.0 / wl, &w));
        }
    }
    Ok(basis)
}

/// A hyperplane through `apex` with normal `anchor − apex`, equipped with an
/// orthonormal basis; it hosts the Carleman-type integrals.
#[derive(Debug, Clone)]
pub struct CarlemanFrame {
    pub n: usize,
    pub apex: Vector,
    pub anchor: Vector,
    pub basis: Vec<Vector>,
}

/// Weighted quadrature node on a hyperplane.
#[derive(Debug, Clone, Copy)]
pub struct PlaneNode {
    pub point: Vector,
    /// In-plane offset `z = point − apex`.
    pub offset: Vector,
    pub weight: f64,
}

/// Radially graded rule for hyperplane integrals: geometric shells toward the
/// apex (ratio `ratio`) down to `r_min`, each shell with `gauss` Gauss–Legendre
/// radial nodes; in three dimensions `angular` equispaced in-plane directions.
#[derive(Debug, Clone)]
pub struct PlaneRule {
    pub r_min: f64,
    pub r_max: f64,
    pub ratio: f64,
    pub gauss: usize,
    pub angular: usize,
}

impl PlaneRule {
    /// Radial nodes and weights on `[r_min, r_max]` (geometric shells).
    pub fn radial_nodes(&self) -> Vec<(f64, f64)> {
        let (x, w) = crate::quadrature::gauss_legendre(self.gauss);
        let mut out = Vec::new();
        let mut hi = self.r_max;
        while hi > self.r_min {
            let lo = (hi / self.ratio).max(self.r_min);
            let (c, hw) = (0.5 * (hi + lo), 0.5 * (hi - lo));
            for (xi, wi) in x.iter().zip(&w) {
                out.push((c + hw * xi, hw * wi));
            }
            hi = lo;
        }
        out
    }
}

impl CarlemanFrame {
    /// Frame with the given apex and anchor; fails when they coincide.
    pub fn new(n: usize, apex: Vector, anchor: Vector) -> Result<Self> {
        let normal = sub(&anchor, &apex);
        if norm(&normal) == 0.0 {
            return Err(Error::Singular("degenerate frame: apex equals anchor".into()));
        }
        let basis = orthogonal_complement(n, &normal)?;
        Ok(Self { n, apex, anchor, basis })
    }

    /// Nodes of the plane rule, covering `r_min ≤ |z| ≤ r_max` with unit Jacobian
    /// (in two dimensions the plane is a line and nodes come in `±z` pairs).
    pub fn nodes(&self, rule: &PlaneRule) -> Vec<PlaneNode> {
        let radial = rule.radial_nodes();
        let mut out = Vec::new();
        if self.n == 2 {
            let e = self.basis[0];
            for &(r, w) in &radial {
                for sgn in [1.0, -1.0] {
                    let offset = scale(sgn * r, &e);
                    out.push(PlaneNode { point: add(&self.apex, &offset), offset, weight: w });
                }
            }
        } else {
            let m = rule.angular.max(2);
            let dphi = 2.0 * std::f64::consts::PI / m as f64;
            for &(r, w) in &radial {
                for j in 0..m {
                    let phi = (j as f64 + 0.5) * dphi;
                    let dir = axpy(&scale(phi.cos(), &self.basis[0]), phi.sin(), &self.basis[1]);
                    let offset = scale(r, &dir);
                    out.push(PlaneNode { point: add(&self.apex, &offset), offset, weight: w * r * dphi });
                }
            }
        }
        out
    }

    /// Largest value of `|⟨anchor − apex, w − apex⟩|` over the nodes (orthogonality residual).
    pub fn orthogonality_residual(&self, nodes: &[PlaneNode]) -> f64 {
        let normal = sub(&self.anchor, &self.apex);
        nodes.iter().map(|p| dot(&normal, &sub(&p.point, &self.apex)).abs()).fold(0.0, f64::max)
    }
}

/// Straight path `ζ(ϑ) = v + ϑ(v' − v)` and its lift `ζ̲(ϑ)` on the paraboloid.
#[derive(Debug, Clone, Copy)]
pub struct CollisionPath {
    pub v: Vector,
    pub v_prime: Vector,
}

/// Point, lifted point and lifted velocity of a path at parameter `ϑ`.
#[derive(Debug, Clone, Copy)]
pub struct PathPoint {
    pub zeta: Vector,
    pub zeta_lift: [f64; 4],
    pub dzeta_lift: [f64; 4],
}

impl CollisionPath {
    /// Evaluates the path; `ϑ` must lie in `[0, 1]`.
    pub fn eval(&self, theta: f64) -> Result<PathPoint> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain(format!("path parameter {theta} outside [0,1]")));
        }
        let d = sub(&self.v_prime, &self.v);
        let zeta = axpy(&self.v, theta, &d);
        Ok(PathPoint { zeta, zeta_lift: lift(&zeta), dzeta_lift: [d[0], d[1], d[2], dot(&zeta, &d)] })
    }

    /// Second derivative of the lifted path: `(0, |v' − v|²)`.
    pub fn second_derivative(&self) -> [f64; 4] {
        [0.0, 0.0, 0.0, norm2(&sub(&self.v_prime, &self.v))]
    }
}

/// Jacobian determinant of the shift `v ↦ ζ(ϑ) = v + ϑ(v' − v)` at fixed `v_*, σ`
/// in three dimensions: `(1 − ϑ/2)² {(1 − ϑ/2) + (ϑ/2)⟨k,σ⟩}`.
pub fn jacobian_zeta_shift(theta: f64, cos_k_sigma: f64) -> Result<f64> {
    jacobian_zeta_shift_n(3, theta, cos_k_sigma)
}

/// Dimension-general form `(1 − ϑ/2)^{n−1} {(1 − ϑ/2) + (ϑ/2)⟨k,σ⟩}`, obtained
/// from `dζ/dv = (1 − ϑ/2) I + (ϑ/2) σ ⊗ k` and the matrix determinant lemma.
pub fn jacobian_zeta_shift_n(n: usize, theta: f64, cos_k_sigma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("path parameter {theta} outside [0,1]")));
    }
    if !(0.0..=1.0).contains(&cos_k_sigma) {
        return Err(Error::Domain(format!("cosine {cos_k_sigma} outside [0,1]")));
    }
    let a = 1.0 - 0.5 * theta;
    Ok(a.powi(n as i32 - 1) * (a + 0.5 * theta * cos_k_sigma))
}
