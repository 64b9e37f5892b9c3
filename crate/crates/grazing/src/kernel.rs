//! The collision-kernel family, the global Maxwellian and its square root,
//! the unified velocity weight, and the dyadic decomposition of the angular
//! singularity.
//!
//! The kernel has product form `B(v − v_*, σ) = Φ(|v − v_*|) b(⟨k, σ⟩)` with
//! `Φ(r) = C_Φ r^γ` and the canonical angular factor
//! `b(cos θ) = θ^{−1−2s} / sin^{n−2} θ` on `θ ∈ (0, π/2]` and zero beyond, so
//! that `sin^{n−2}θ · b · θ^{1+2s} = 1` holds identically.
//!
//! The loss frequency is kept whole: `ν := ν̃` and the compact multiplier
//! `ν_K` is identically zero, hence `N g = −Γ(M, g)` and `K g = −Γ(g, M)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bracket, dot, norm, norm2, sub, Vector};

/// Hard (`γ + 2s ≥ 0`) or soft (`γ + 2s < 0`) interaction regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Hard,
    Soft,
}

/// Parameters of the collision kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    /// Velocity dimension `n ≥ 2`.
    pub n: usize,
    /// Angular singularity exponent `0 < s < 1`.
    pub s: f64,
    /// Kinetic exponent `γ`.
    pub gamma: f64,
    /// Kinetic constant `C_Φ > 0`.
    #[serde(default = "default_c_phi")]
    pub c_phi: f64,
}

fn default_c_phi() -> f64 {
    1.0
}

impl KernelParams {
    /// Validated constructor.
    ///
    /// The admissible kinetic exponents are `γ ≥ −n` (the endpoint `γ = −n` is
    /// admitted because the two-dimensional soft test case `γ = −2` sits on it;
    /// every integrand used here carries at least one power of `|v − v_*|`
    /// from the collisional differences, which keeps it integrable).
    pub fn new(n: usize, s: f64, gamma: f64, c_phi: f64) -> Result<Self> {
        let p = Self { n, s, gamma, c_phi };
        p.validate()?;
        Ok(p)
    }

    /// Checks the invariants of the kernel family.
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.n) {
            return Err(Error::Domain(format!("dimension n = {} not supported (n ∈ {{2, 3}})", self.n)));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Domain(format!("singularity exponent s = {} outside (0, 1)", self.s)));
        }
        if !(self.gamma >= -(self.n as f64)) || !self.gamma.is_finite() {
            return Err(Error::Domain(format!("kinetic exponent gamma = {} below -n", self.gamma)));
        }
        if !(self.c_phi > 0.0) || !self.c_phi.is_finite() {
            return Err(Error::Domain(format!("kinetic constant c_phi = {} must be positive", self.c_phi)));
        }
        Ok(())
    }

    /// Inverse-power-law interactions `φ(r) = r^{−(p−1)}` in three dimensions:
    /// `γ = (p−5)/(p−1)`, `s = 1/(p−1)`.
    pub fn from_inverse_power(p: f64, n: usize) -> Result<Self> {
        if !(p > 2.0) {
            return Err(Error::Domain(format!(
                "Boltzmann operator not well defined for p = {p} (inverse-power exponent must exceed 2)"
            )));
        }
        if n != 3 {
            return Err(Error::Domain(format!("inverse-power parametrisation is stated for n = 3 only (got n = {n})")));
        }
        Self::new(3, 1.0 / (p - 1.0), (p - 5.0) / (p - 1.0), 1.0)
    }

    /// Regime derived from the sign of `γ + 2s`.
    pub fn regime(&self) -> Regime {
        if self.gamma + 2.0 * self.s >= 0.0 {
            Regime::Hard
        } else {
            Regime::Soft
        }
    }

    /// Kinetic factor `Φ(r) = C_Φ r^γ`.
    #[inline(always)]
    pub fn phi(&self, r: f64) -> f64 {
        if self.gamma == 0.0 {
            self.c_phi
        } else {
            self.c_phi * r.powf(self.gamma)
        }
    }

    /// Angular factor as a function of the deviation angle `θ ∈ [0, π]`.
    #[inline(always)]
    pub fn b_of_theta(&self, theta: f64) -> f64 {
        if theta > std::f64::consts::FRAC_PI_2 {
            return 0.0;
        }
        if theta <= 0.0 {
            return f64::INFINITY;
        }
        let base = theta.powf(-1.0 - 2.0 * self.s);
        match self.n {
            2 => base,
            n => base / theta.sin().powi(n as i32 - 2),
        }
    }

    /// Angular factor `b(cos θ)`; returns `+∞` at `cos θ = 1`, zero for `cos θ < 0`.
    pub fn angular_b(&self, cos_theta: f64) -> f64 {
        let c = cos_theta.clamp(-1.0, 1.0);
        if c >= 1.0 {
            return f64::INFINITY;
        }
        self.b_of_theta(c.acos())
    }

    /// Full kernel `B = C_Φ |v−v_*|^γ b(⟨k, σ⟩)`.
    pub fn collision_b(&self, v: &Vector, v_star: &Vector, sigma: &Vector) -> Result<f64> {
        if (norm(sigma) - 1.0).abs() > 1e-10 {
            return Err(Error::Domain("sigma must be a unit vector".into()));
        }
        let u = sub(v, v_star);
        let r = norm(&u);
        if r == 0.0 {
            if self.gamma < 0.0 {
                return Err(Error::Singular("v = v_* with negative kinetic exponent".into()));
            }
            return Ok(0.0);
        }
        Ok(self.phi(r) * self.angular_b(dot(&u, sigma) / r))
    }

    /// Dyadic piece `B_k = B · χ_k(|v − v'|)`.
    pub fn collision_bk(&self, k: i32, v: &Vector, v_star: &Vector, sigma: &Vector) -> Result<f64> {
        let b = self.collision_b(v, v_star, sigma)?;
        let (vp, _) = crate::geometry::post_collisional(v, v_star, sigma);
        let chi = DyadicCutoff::chi(k, norm(&sub(v, &vp)));
        Ok(if chi == 0.0 { 0.0 } else { b * chi })
    }

    /// Unified weight: `⟨v⟩` for hard potentials, `⟨v⟩^{−γ−2s}` for soft ones.
    #[inline]
    pub fn weight_w(&self, v: &Vector) -> f64 {
        match self.regime() {
            Regime::Hard => bracket(v),
            Regime::Soft => bracket(v).powf(-self.gamma - 2.0 * self.s),
        }
    }

    /// `w^{2ℓ}(v)`.
    #[inline]
    pub fn weight_pow(&self, v: &Vector, ell: f64) -> f64 {
        if ell == 0.0 {
            1.0
        } else {
            self.weight_w(v).powf(2.0 * ell)
        }
    }

    /// The compact multiplier `ν_K`, identically zero under the chosen splitting.
    pub fn nu_k(&self, _v: &Vector) -> f64 {
        0.0
    }

    /// `∫_{θ_min}^{π/2} θ^{−1−2s} dθ`: the truncated angular moment
    /// `∫ b(t)(1−t²)^{(n−3)/2} dt` over `θ ≥ θ_min`.
    pub fn truncated_b_moment(&self, theta_min: f64) -> f64 {
        let s2 = 2.0 * self.s;
        (theta_min.powf(-s2) - std::f64::consts::FRAC_PI_2.powf(-s2)) / s2
    }
}

/// Dyadic partition `{χ_k}` of `(0, ∞)`: `χ_k` is the indicator of
/// `[2^{−k−1}, 2^{−k})`, so `0 ≤ χ_k ≤ 1`, `supp χ_k ⊂ [2^{−k−1}, 2^{−k}]` and
/// `Σ_k χ_k ≡ 1` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicCutoff {
    pub k: i32,
}

impl DyadicCutoff {
    /// Value of `χ_k(r)`.
    #[inline]
    pub fn chi(k: i32, r: f64) -> f64 {
        if r <= 0.0 || !r.is_finite() {
            return 0.0;
        }
        let lo = (-(k as f64) - 1.0).exp2();
        let hi = (-(k as f64)).exp2();
        if r >= lo && r < hi {
            1.0
        } else {
            0.0
        }
    }

    /// The unique index with `χ_k(r) = 1`.
    pub fn index_of(r: f64) -> i32 {
        let k = (-r.log2()).ceil() as i32 - 1;
        // Guard against rounding at exact powers of two.
        for cand in [k - 1, k, k + 1] {
            if Self::chi(cand, r) == 1.0 {
                return cand;
            }
        }
        k
    }

    /// Support interval `[2^{−k−1}, 2^{−k}]`.
    pub fn support(&self) -> (f64, f64) {
        ((-(self.k as f64) - 1.0).exp2(), (-(self.k as f64)).exp2())
    }

    /// Evaluates this piece of the partition.
    pub fn eval(&self, r: f64) -> f64 {
        Self::chi(self.k, r)
    }
}

/// Global Maxwellian `μ(v) = (2π)^{−n/2} e^{−|v|²/2}`.
#[inline(always)]
pub fn maxwellian(v: &Vector, n: usize) -> f64 {
    let c = match n {
        2 => 1.0 / (2.0 * std::f64::consts::PI),
        3 => (2.0 * std::f64::consts::PI).powf(-1.5),
        _ => (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0),
    };
    c * (-0.5 * norm2(v)).exp()
}

/// Normalisation constant of `M = √μ`, namely `(2π)^{−n/4}`.
#[inline(always)]
pub fn sqrt_maxwellian_const(n: usize) -> f64 {
    match n {
        2 => (2.0 * std::f64::consts::PI).powf(-0.5),
        _ => (2.0 * std::f64::consts::PI).powf(-(n as f64) / 4.0),
    }
}

/// `M(v) = √μ(v) = (2π)^{−n/4} e^{−|v|²/4}`.
#[inline(always)]
pub fn sqrt_maxwellian(v: &Vector, n: usize) -> f64 {
    sqrt_maxwellian_const(n) * (-0.25 * norm2(v)).exp()
}

/// Derivative `∂_β M` for a multi-index of order at most two (exact
/// polynomial-times-Gaussian expression).
pub fn m_beta(v: &Vector, n: usize, beta: &[usize]) -> Result<f64> {
    let order: usize = beta.iter().sum();
    if order > 2 {
        return Err(Error::UnsupportedOrder(format!("|beta| = {order} > 2")));
    }
    if beta.len() > n {
        return Err(Error::Domain("multi-index longer than the dimension".into()));
    }
    let m = sqrt_maxwellian(v, n);
    let idx: Vec<usize> = beta.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat(i).take(c)).collect();
    let p = match idx.as_slice() {
        [] => 1.0,
        [i] => -0.5 * v[*i],
        [i, j] if i == j => 0.25 * v[*i] * v[*i] - 0.5,
        [i, j] => 0.25 * v[*i] * v[*j],
        _ => unreachable!(),
    };
    Ok(p * m)
}
