//! Time evolution of the perturbation equation `∂_t f + v·∇_x f + L f = Γ(f, f)`,
//! the Picard iteration, macroscopic diagnostics, local conservation-law
//! residuals, energy functionals and decay-rate fitting.
//!
//! States live either on the velocity grid alone (spatially homogeneous) or on
//! the product of a one-dimensional spatial torus, aligned with the first
//! velocity axis, and the velocity grid (transport mode).
//!
//! The collision part is integrated by implicit Euler with the conservative
//! matrix `L_c = (I − P) L (I − P)`, so the macroscopic part `Pf` is untouched
//! by collisions up to rounding; a nonlinear source `(I − P)Γ(f, f)` is added
//! explicitly.  Transport uses Strang splitting with exact Fourier advection.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::collision::CollisionSetup;
use crate::error::{Error, Result};
use crate::geometry::norm2;
use crate::kernel::{maxwellian, sqrt_maxwellian, KernelParams, Regime};
use crate::linearized::{linear_fit, NullBasis, OperatorMatrix};
use crate::quadrature::{ScalarField, VelocityGrid};

/// Homogeneous or transport evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Homogeneous,
    Transport,
}

/// One-dimensional periodic spatial grid along the first velocity axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    pub points: usize,
    pub length: f64,
}

impl Torus {
    pub fn new(points: usize, length: f64) -> Result<Self> {
        if points < 2 || !(length > 0.0 && length.is_finite()) {
            return Err(Error::Domain(format!("torus needs ≥ 2 points and positive length (got {points}, {length})")));
        }
        Ok(Self { points, length })
    }

    /// Spatial mesh width.
    pub fn h(&self) -> f64 {
        self.length / self.points as f64
    }

    /// Node coordinate `x_i = i·h`.
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    /// Angular wave number of FFT slot `m`; the Nyquist slot is reported as 0
    /// for derivatives (its derivative is not representable on real data).
    fn wavenumber(&self, m: usize) -> f64 {
        let d = self.points;
        let signed = if m <= d / 2 { m as f64 } else { m as f64 - d as f64 };
        2.0 * std::f64::consts::PI * signed / self.length
    }
}

/// Perturbation `f(t, x, v)` on the velocity grid, optionally times a torus.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub grid: VelocityGrid,
    pub torus: Option<Torus>,
    /// Values in x-major order: `values[ix * grid.len() + iv]`.
    pub values: Vec<f64>,
}

impl State {
    /// Spatially homogeneous state.
    pub fn homogeneous(t: f64, f: ScalarField) -> Self {
        Self { t, grid: f.grid, torus: None, values: f.values }
    }

    /// Transport state from one velocity field per torus node.
    pub fn transport(t: f64, torus: Torus, slices: &[ScalarField]) -> Result<Self> {
        if slices.len() != torus.points {
            return Err(Error::Domain(format!("{} slices for a torus with {} points", slices.len(), torus.points)));
        }
        let grid = slices[0].grid;
        if slices.iter().any(|s| s.grid != grid) {
            return Err(Error::Domain("slices live on different velocity grids".into()));
        }
        let values = slices.iter().flat_map(|s| s.values.iter().copied()).collect();
        Ok(Self { t, grid, torus: Some(torus), values })
    }

    /// Transport state sampled from `f(x, v)`.
    pub fn sample_transport<F: Fn(f64, &[f64; 3]) -> f64>(t: f64, torus: Torus, grid: VelocityGrid, f: F) -> Self {
        let mut values = Vec::with_capacity(torus.points * grid.len());
        for ix in 0..torus.points {
            let x = torus.x(ix);
            values.extend(grid.nodes().iter().map(|v| f(x, v)));
        }
        Self { t, grid, torus: Some(torus), values }
    }

    pub fn mode(&self) -> Mode {
        if self.torus.is_some() {
            Mode::Transport
        } else {
            Mode::Homogeneous
        }
    }

    /// Number of spatial nodes (1 in homogeneous mode).
    pub fn d_x(&self) -> usize {
        self.torus.map_or(1, |t| t.points)
    }

    /// Spatial quadrature weight (1 in homogeneous mode).
    fn dx(&self) -> f64 {
        self.torus.map_or(1.0, |t| t.h())
    }

    /// Velocity field at spatial node `ix`.
    pub fn slice(&self, ix: usize) -> ScalarField {
        let len = self.grid.len();
        ScalarField { grid: self.grid, values: self.values[ix * len..(ix + 1) * len].to_vec() }
    }

    pub fn slices(&self) -> Vec<ScalarField> {
        (0..self.d_x()).map(|ix| self.slice(ix)).collect()
    }

    fn with_slices(&self, t: f64, slices: &[ScalarField]) -> Self {
        Self { t, grid: self.grid, torus: self.torus, values: slices.iter().flat_map(|s| s.values.iter().copied()).collect() }
    }

    /// `(∫dx ∫dv f²)^{1/2}`.
    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|x| x * x).sum::<f64>() * self.grid.cell_volume() * self.dx()).sqrt()
    }

    /// Global invariants `∫∫ √μ f`, `∫∫ v_i √μ f`, `∫∫ |v|² √μ f` (mass,
    /// momentum components, energy).
    pub fn global_invariants(&self) -> Vec<f64> {
        let n = self.grid.n;
        let nodes = self.grid.nodes();
        let mut out = vec![0.0; n + 2];
        let len = self.grid.len();
        for ix in 0..self.d_x() {
            for (iv, v) in nodes.iter().enumerate() {
                let w = sqrt_maxwellian(v, n) * self.values[ix * len + iv];
                out[0] += w;
                for i in 0..n {
                    out[1 + i] += v[i] * w;
                }
                out[n + 1] += norm2(v) * w;
            }
        }
        let q = self.grid.cell_volume() * self.dx();
        out.iter().map(|x| x * q).collect()
    }

    /// Boltzmann entropy `H = −∫∫ F log F` of `F = μ + √μ f`; `None` if `F`
    /// is not positive at some node (positivity is checked, not enforced).
    pub fn entropy_h(&self) -> Option<f64> {
        let n = self.grid.n;
        let nodes = self.grid.nodes();
        let len = self.grid.len();
        let mut acc = 0.0;
        for ix in 0..self.d_x() {
            for (iv, v) in nodes.iter().enumerate() {
                let big_f = maxwellian(v, n) + sqrt_maxwellian(v, n) * self.values[ix * len + iv];
                if big_f <= 0.0 {
                    return None;
                }
                acc -= big_f * big_f.ln();
            }
        }
        Some(acc * self.grid.cell_volume() * self.dx())
    }

    fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical(format!("non-finite state at t = {}", self.t)))
        }
    }
}

/// Exact advection `∂_t f + v_1 ∂_x f = 0` and spectral `∂_x` on the torus.
struct Spectral {
    torus: Torus,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Spectral {
    fn new(torus: Torus) -> Self {
        let mut planner = FftPlanner::new();
        Self { torus, forward: planner.plan_fft_forward(torus.points), inverse: planner.plan_fft_inverse(torus.points) }
    }

    /// Applies `f̂_m ↦ mult(m) f̂_m` to one real periodic sequence.
    fn filter<M: Fn(usize, f64) -> Complex<f64>>(&self, data: &mut [f64], mult: M) {
        let d = self.torus.points;
        let mut buf: Vec<Complex<f64>> = data.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        for (m, c) in buf.iter_mut().enumerate() {
            *c *= mult(m, self.torus.wavenumber(m));
        }
        self.inverse.process(&mut buf);
        for (x, c) in data.iter_mut().zip(&buf) {
            *x = c.re / d as f64;
        }
    }

    /// Shifts every velocity column by `v_1 τ`.
    fn advect(&self, state: &mut State, tau: f64) {
        let len = state.grid.len();
        let d = self.torus.points;
        let nyquist = if d % 2 == 0 { Some(d / 2) } else { None };
        let mut col = vec![0.0; d];
        for iv in 0..len {
            let v1 = state.grid.node(iv)[0];
            for ix in 0..d {
                col[ix] = state.values[ix * len + iv];
            }
            self.filter(&mut col, |m, k| {
                let k = if Some(m) == nyquist { std::f64::consts::PI * d as f64 / self.torus.length } else { k };
                let ph = -k * v1 * tau;
                Complex::new(ph.cos(), ph.sin())
            });
            for ix in 0..d {
                state.values[ix * len + iv] = col[ix];
            }
        }
    }

    /// Spectral derivative of a periodic sequence (Nyquist mode dropped).
    fn derivative(&self, data: &[f64]) -> Vec<f64> {
        let d = self.torus.points;
        let nyquist = if d % 2 == 0 { Some(d / 2) } else { None };
        let mut out = data.to_vec();
        self.filter(&mut out, |m, k| if Some(m) == nyquist { Complex::new(0.0, 0.0) } else { Complex::new(0.0, k) });
        out
    }
}

/// Time discretisation of the collision part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Implicit Euler in `L_c`, explicit in the nonlinear source; unconditionally stable.
    Implicit,
    /// Forward Euler; stable only for `dt < 2/λ_max(L_c)` (see [`explicit_dt_bound`]).
    Explicit,
}

/// Stability bound `2/λ_max` of the forward-Euler collision step for the
/// conservative part of `matrix`.
pub fn explicit_dt_bound(matrix: &OperatorMatrix) -> Result<f64> {
    let basis = NullBasis::new(matrix.grid)?;
    let top = matrix.conservative(&basis).spectrum().values.last().copied().unwrap_or(0.0);
    Ok(if top > 0.0 { 2.0 / top } else { f64::INFINITY })
}

/// Collision propagator for a fixed matrix and time step (implicit Euler
/// unless built with [`Stepper::with_scheme`]).
pub struct Stepper<'a> {
    pub dt: f64,
    /// The conservative matrix `L_c`.
    pub matrix: OperatorMatrix,
    pub basis: NullBasis,
    pub scheme: Scheme,
    /// Cholesky factor of `I + dt·L_c` (implicit scheme only).
    factor: Option<Cholesky<f64, Dyn>>,
    setup: Option<&'a CollisionSetup>,
}

impl<'a> Stepper<'a> {
    /// Factorises `I + dt·L_c` with `L_c = (I − P) L (I − P)`.
    pub fn new(matrix: &OperatorMatrix, dt: f64) -> Result<Self> {
        Self::with_scheme(matrix, dt, Scheme::Implicit)
    }

    /// Propagator with an explicit choice of scheme.  The explicit scheme does
    /// not check its stability bound; callers guard `dt` with [`explicit_dt_bound`].
    pub fn with_scheme(matrix: &OperatorMatrix, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        let basis = NullBasis::new(matrix.grid)?;
        let lc = matrix.conservative(&basis);
        let factor = match scheme {
            Scheme::Implicit => {
                let len = lc.grid.len();
                Some(factorize(DMatrix::identity(len, len) + &lc.matrix * dt)?)
            }
            Scheme::Explicit => None,
        };
        Ok(Self { dt, matrix: lc, basis, scheme, factor, setup: None })
    }

    /// Enables nonlinear steps with the collision operator of `setup`.
    pub fn with_collisions(mut self, setup: &'a CollisionSetup) -> Result<Self> {
        if setup.grid != self.matrix.grid {
            return Err(Error::Domain("collision setup and matrix use different grids".into()));
        }
        self.setup = Some(setup);
        Ok(self)
    }

    /// `(I − P)Γ(f, f)` on one velocity slice.
    fn source(&self, f: &ScalarField) -> Result<ScalarField> {
        let setup = self
            .setup
            .ok_or_else(|| Error::Config("nonlinear step requested without a collision setup".into()))?;
        let gam = setup.gamma_apply(f, f, None)?;
        Ok(self.basis.project(&gam)?.qg)
    }

    fn collide(&self, state: &State, nonlinear: bool) -> Result<State> {
        let mut out = Vec::with_capacity(state.d_x());
        for f in state.slices() {
            let rhs = if nonlinear { f.lincomb(1.0, &self.source(&f)?, self.dt) } else { f.clone() };
            let next = match &self.factor {
                Some(factor) => {
                    let x = factor.solve(&DVector::from_column_slice(&rhs.values));
                    ScalarField { grid: rhs.grid, values: x.as_slice().to_vec() }
                }
                None => rhs.lincomb(1.0, &self.matrix.apply(&f), -self.dt),
            };
            out.push(next);
        }
        Ok(state.with_slices(state.t, &out))
    }

    /// One time step; transport states use half-step advection on both sides.
    pub fn step(&self, state: &State, nonlinear: bool) -> Result<State> {
        if state.grid != self.matrix.grid {
            return Err(Error::Domain("state and matrix use different grids".into()));
        }
        let mut next = match state.torus {
            None => self.collide(state, nonlinear)?,
            Some(torus) => {
                let sp = Spectral::new(torus);
                let mut s = state.clone();
                sp.advect(&mut s, 0.5 * self.dt);
                let mut s = self.collide(&s, nonlinear)?;
                sp.advect(&mut s, 0.5 * self.dt);
                s
            }
        };
        next.t = state.t + self.dt;
        next.check_finite()?;
        Ok(next)
    }

    /// `steps` steps; returns the history including the initial state.
    pub fn run(&self, state: &State, steps: usize, nonlinear: bool) -> Result<Vec<State>> {
        let mut history = Vec::with_capacity(steps + 1);
        history.push(state.clone());
        for _ in 0..steps {
            let next = self.step(history.last().expect("non-empty"), nonlinear)?;
            history.push(next);
        }
        Ok(history)
    }
}

fn factorize(sys: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    match Cholesky::new(sys.clone()) {
        Some(c) => Ok(c),
        None => {
            let eig = SymmetricEigen::new(sys).eigenvalues;
            let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x.abs())));
            Err(Error::Numerical(format!(
                "implicit system not positive definite: eigenvalues in [{lo:.3e}, {hi:.3e}], condition estimate {:.3e}",
                hi / lo.abs().max(f64::MIN_POSITIVE)
            )))
        }
    }
}

/// Single step with a freshly factorised propagator; see [`Stepper`] for runs.
pub fn step(state: &State, dt: f64, nonlinear: bool, matrix: &OperatorMatrix, setup: Option<&CollisionSetup>) -> Result<State> {
    let stepper = Stepper::new(matrix, dt)?;
    let stepper = match setup {
        Some(s) => stepper.with_collisions(s)?,
        None => stepper,
    };
    stepper.step(state, nonlinear)
}

// ---------------------------------------------------------------------------
// Macroscopic fields and conservation laws
// ---------------------------------------------------------------------------

/// Coefficients of `Pf = (a + b·v + c|v|²)√μ` at each spatial node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroFields {
    pub a: Vec<f64>,
    /// `b[i][ix]`.
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    /// `⟨|v|² v_1 √μ, (I − P)f⟩` at each node.
    pub heat_flux: Vec<f64>,
    /// `⟨v_i v_1 √μ, (I − P)f⟩` at each node, indexed `[i][ix]`.
    pub stress: Vec<Vec<f64>>,
}

impl MacroFields {
    /// Spatial means of `a`, `b_i`, `c`.
    pub fn means(&self) -> (f64, Vec<f64>, f64) {
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        (mean(&self.a), self.b.iter().map(|b| mean(b)).collect(), mean(&self.c))
    }
}

/// Extracts `a, b, c` by null-basis projection at every spatial node, with
/// the first-moment fluxes of the microscopic part.
pub fn macro_extract(state: &State, basis: &NullBasis) -> Result<MacroFields> {
    let n = state.grid.n;
    let d = state.d_x();
    let nodes = state.grid.nodes();
    let mut m = MacroFields {
        a: Vec::with_capacity(d),
        b: vec![Vec::with_capacity(d); n],
        c: Vec::with_capacity(d),
        heat_flux: Vec::with_capacity(d),
        stress: vec![Vec::with_capacity(d); n],
    };
    let hn = state.grid.cell_volume();
    for f in state.slices() {
        let p = basis.project(&f)?;
        m.a.push(p.a);
        for i in 0..n {
            m.b[i].push(p.b[i]);
        }
        m.c.push(p.c);
        let mut q = 0.0;
        let mut st = vec![0.0; n];
        for (v, g) in nodes.iter().zip(&p.qg.values) {
            let w = sqrt_maxwellian(v, n) * g * v[0];
            q += norm2(v) * w;
            for i in 0..n {
                st[i] += v[i] * w;
            }
        }
        m.heat_flux.push(q * hn);
        for i in 0..n {
            m.stress[i].push(st[i] * hn);
        }
    }
    Ok(m)
}

/// Root-mean-square residuals of the three local conservation laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationResiduals {
    pub mode: Mode,
    /// `∂_t a − ½ ∂_x⟨|v|² v_1 √μ, (I−P)f⟩`.
    pub a_law: f64,
    /// `∂_t b + ∇(a + (n+2)c) + ∇·⟨v⊗v √μ, (I−P)f⟩` (Euclidean norm over components).
    pub b_law: f64,
    /// `∂_t c + (1/n)∂_x b_1 + (1/2n)∂_x⟨|v|² v_1 √μ, (I−P)f⟩`.
    pub c_law: f64,
}

impl ConservationResiduals {
    pub fn max(&self) -> f64 {
        self.a_law.max(self.b_law).max(self.c_law)
    }
}

/// Conservation-law residuals between two consecutive states, centred at the
/// midpoint time (time differences over the interval, fluxes averaged).
/// Homogeneous states only carry the time-derivative parts.
pub fn macro_residuals(s0: &State, s1: &State, basis: &NullBasis) -> Result<ConservationResiduals> {
    if s0.grid != s1.grid || s0.torus != s1.torus {
        return Err(Error::Domain("residuals need two states on the same grids".into()));
    }
    let dt = s1.t - s0.t;
    if dt <= 0.0 {
        return Err(Error::Domain("states must be ordered in time".into()));
    }
    let n = s0.grid.n as f64;
    let (m0, m1) = (macro_extract(s0, basis)?, macro_extract(s1, basis)?);
    let d = s0.d_x();
    let dt_of = |x0: &[f64], x1: &[f64]| -> Vec<f64> { x0.iter().zip(x1).map(|(a, b)| (b - a) / dt).collect() };
    let mid = |x0: &[f64], x1: &[f64]| -> Vec<f64> { x0.iter().zip(x1).map(|(a, b)| 0.5 * (a + b)).collect() };
    let rms = |x: &[f64]| (x.iter().map(|y| y * y).sum::<f64>() / x.len() as f64).sqrt();
    let dxf: Box<dyn Fn(&[f64]) -> Vec<f64>> = match s0.torus {
        Some(t) => {
            let sp = Spectral::new(t);
            Box::new(move |x: &[f64]| sp.derivative(x))
        }
        None => Box::new(|x: &[f64]| vec![0.0; x.len()]),
    };
    let da = dt_of(&m0.a, &m1.a);
    let dc = dt_of(&m0.c, &m1.c);
    let q_x = dxf(&mid(&m0.heat_flux, &m1.heat_flux));
    let a_res: Vec<f64> = (0..d).map(|ix| da[ix] - 0.5 * q_x[ix]).collect();
    let b1_x = dxf(&mid(&m0.b[0], &m1.b[0]));
    let c_res: Vec<f64> = (0..d).map(|ix| dc[ix] + b1_x[ix] / n + q_x[ix] / (2.0 * n)).collect();
    let pressure: Vec<f64> = (0..d).map(|ix| 0.5 * (m0.a[ix] + m1.a[ix]) + (n + 2.0) * 0.5 * (m0.c[ix] + m1.c[ix])).collect();
    let p_x = dxf(&pressure);
    let mut b_sq = 0.0;
    for i in 0..s0.grid.n {
        let db = dt_of(&m0.b[i], &m1.b[i]);
        let s_x = dxf(&mid(&m0.stress[i], &m1.stress[i]));
        let res: Vec<f64> = (0..d).map(|ix| db[ix] + if i == 0 { p_x[ix] } else { 0.0 } + s_x[ix]).collect();
        b_sq += rms(&res).powi(2);
    }
    Ok(ConservationResiduals { mode: s0.mode(), a_law: rms(&a_res), b_law: b_sq.sqrt(), c_law: rms(&c_res) })
}

/// Coefficients of a velocity field with respect to the non-orthogonal basis
/// `{v_i|v|²√μ, v_i²√μ, v_i v_j √μ (i<j), v_i √μ, √μ}`, obtained by inverting its
/// grid Gram matrix.
#[derive(Debug, Clone)]
pub struct MacroBasis {
    grid: VelocityGrid,
    elements: Vec<ScalarField>,
    gram: Cholesky<f64, Dyn>,
    /// Slot of `v_i |v|² √μ`.
    pub heat: Vec<usize>,
    /// Slot of `v_i² √μ`.
    pub diag: Vec<usize>,
    /// Slot of `v_i v_j √μ` for `i < j`, keyed by `(i, j)`.
    pub off: Vec<((usize, usize), usize)>,
    /// Slot of `v_i √μ`.
    pub lin: Vec<usize>,
    /// Slot of `√μ`.
    pub constant: usize,
}

impl MacroBasis {
    pub fn new(grid: VelocityGrid) -> Result<Self> {
        let n = grid.n;
        let m = move |v: &[f64; 3]| sqrt_maxwellian(v, n);
        let mut elements = Vec::new();
        let slot = |f: ScalarField, e: &mut Vec<ScalarField>| {
            e.push(f);
            e.len() - 1
        };
        let heat = (0..n).map(|i| slot(grid.sample(move |v| v[i] * norm2(v) * m(v)), &mut elements)).collect();
        let diag = (0..n).map(|i| slot(grid.sample(move |v| v[i] * v[i] * m(v)), &mut elements)).collect();
        let mut off = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                off.push(((i, j), slot(grid.sample(move |v| v[i] * v[j] * m(v)), &mut elements)));
            }
        }
        let lin = (0..n).map(|i| slot(grid.sample(move |v| v[i] * m(v)), &mut elements)).collect();
        let constant = slot(grid.sample(m), &mut elements);
        let k = elements.len();
        let g = DMatrix::from_fn(k, k, |i, j| elements[i].inner(&elements[j]));
        let gram = Cholesky::new(g).ok_or_else(|| Error::Numerical("macroscopic basis Gram matrix is singular on this grid".into()))?;
        Ok(Self { grid, elements, gram, heat, diag, off, lin, constant })
    }

    /// Number of elements `3n + 1 + n(n−1)/2`.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Gram-convention coefficients of `g`.
    pub fn coefficients(&self, g: &ScalarField) -> Result<Vec<f64>> {
        if g.grid != self.grid {
            return Err(Error::Domain("field and macroscopic basis live on different grids".into()));
        }
        let rhs = DVector::from_fn(self.len(), |i, _| self.elements[i].inner(g));
        Ok(self.gram.solve(&rhs).as_slice().to_vec())
    }
}

/// Interaction functionals `I_a`, `I_b`, `I_c` (zeroth derivative order) built
/// from the macroscopic fields and the Gram-convention coefficients `r_λ` of
/// `(I − P)f`.  Zero in homogeneous mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub i_a: f64,
    pub i_b: f64,
    pub i_c: f64,
}

impl Interaction {
    pub fn total(&self) -> f64 {
        self.i_a + self.i_b + self.i_c
    }
}

/// Evaluates [`Interaction`] on a state; the spatial axis is the first one,
/// so `∂_j = 0` for `j ≥ 2`.
pub fn interaction(state: &State, basis: &NullBasis, mb: &MacroBasis) -> Result<Interaction> {
    let Some(torus) = state.torus else {
        return Ok(Interaction { i_a: 0.0, i_b: 0.0, i_c: 0.0 });
    };
    let n = state.grid.n;
    let sp = Spectral::new(torus);
    let macro_f = macro_extract(state, basis)?;
    let d = state.d_x();
    let mut r_b1 = Vec::with_capacity(d);
    let mut r_c1 = Vec::with_capacity(d);
    let mut r_off: Vec<Vec<f64>> = vec![Vec::with_capacity(d); n];
    for f in state.slices() {
        let q = basis.project(&f)?.qg;
        let coef = mb.coefficients(&q)?;
        r_b1.push(coef[mb.lin[0]]);
        r_c1.push(coef[mb.heat[0]]);
        for i in 1..n {
            let slot = mb.off.iter().find(|(k, _)| *k == (0, i)).map(|(_, s)| *s).expect("pair slot");
            r_off[i].push(coef[slot]);
        }
    }
    let dx = torus.h();
    let integ = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() * dx;
    let b1_x = sp.derivative(&macro_f.b[0]);
    let rb_x = sp.derivative(&r_b1);
    let c_x = sp.derivative(&macro_f.c);
    let i_a = integ(&b1_x, &macro_f.a) + integ(&rb_x, &macro_f.a);
    let i_c = -integ(&r_c1, &c_x);
    let mut i_b = 0.0;
    for i in 1..n {
        let r_x = sp.derivative(&r_off[i]);
        i_b -= integ(&r_x, &macro_f.b[i]);
    }
    Ok(Interaction { i_a, i_b, i_c })
}

// ---------------------------------------------------------------------------
// Energy functionals
// ---------------------------------------------------------------------------

/// Energy, dissipation and total norm at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    /// `∫∫ f²`.
    pub e0: f64,
    /// `∫∫ w² f²`.
    pub e1: f64,
    /// `∫ ⟨N (I−P)f, (I−P)f⟩ dx`.
    pub d0: f64,
    /// `∫ ⟨N w(I−P)f, w(I−P)f⟩ dx`.
    pub d1: f64,
    /// `E_ℓ(t) + ∫_0^t D_ℓ` for the tracked `ℓ`.
    pub g: f64,
    /// Spatial mean of `a`.
    pub a_mean: f64,
    /// Entropy of `μ + √μ f` (`None` if not positive).
    pub h: Option<f64>,
    pub interaction: Interaction,
}

/// Series of [`EnergySample`]s with monotonicity diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub ell: u8,
    pub samples: Vec<EnergySample>,
    /// `δ` in `dE/dt + δ D ≤ slack·√E·D`: half of the smallest observed
    /// `−(dE/dt)/D` (zero if that is not positive).
    pub delta: f64,
    /// Smallest `slack ≥ 0` making the inequality hold at every interval.
    pub slack: f64,
    /// Largest relative increase of `E` over one interval.
    pub max_energy_increase: f64,
    /// `max_t G(t) / E(0)`.
    pub g_ratio: f64,
}

impl EnergyReport {
    /// CSV with header `t,E0,E1,D0,D1,G,a_mean,H` (RFC 4180, LF line ends).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,E0,E1,D0,D1,G,a_mean,H\n");
        for e in &self.samples {
            let h = e.h.map_or_else(|| "NaN".to_string(), |h| format!("{h:.12e}"));
            s.push_str(&format!(
                "{:.10},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
                e.t, e.e0, e.e1, e.d0, e.d1, e.g, e.a_mean, h
            ));
        }
        s
    }
}

/// Evaluates energies and dissipations along a history; `n_matrix` is the
/// norm part from [`crate::linearized::assemble_split`].
pub fn energy_track(history: &[State], ell: u8, n_matrix: &OperatorMatrix, params: &KernelParams) -> Result<EnergyReport> {
    if ell > 1 {
        return Err(Error::Domain(format!("energy tracking supports ℓ ∈ {{0, 1}}, got {ell}")));
    }
    let Some(first) = history.first() else {
        return Err(Error::Domain("empty history".into()));
    };
    let grid = first.grid;
    if n_matrix.grid != grid {
        return Err(Error::Domain("norm matrix and states use different grids".into()));
    }
    let basis = NullBasis::new(grid)?;
    let mb = if first.torus.is_some() { Some(MacroBasis::new(grid)?) } else { None };
    let w: Vec<f64> = grid.nodes().iter().map(|v| params.weight_pow(v, 0.5)).collect();
    let mut samples: Vec<EnergySample> = Vec::with_capacity(history.len());
    for s in history {
        let dx = s.dx();
        let (mut e0, mut e1, mut d0, mut d1) = (0.0, 0.0, 0.0, 0.0);
        for f in s.slices() {
            e0 += f.inner(&f) * dx;
            let wf = ScalarField { grid, values: f.values.iter().zip(&w).map(|(a, b)| a * b).collect() };
            e1 += wf.inner(&wf) * dx;
            let q = basis.project(&f)?.qg;
            d0 += n_matrix.quadratic(&q) * dx;
            let wq = ScalarField { grid, values: q.values.iter().zip(&w).map(|(a, b)| a * b).collect() };
            d1 += n_matrix.quadratic(&wq) * dx;
        }
        let m = macro_extract(s, &basis)?;
        let inter = match &mb {
            Some(mb) => interaction(s, &basis, mb)?,
            None => Interaction { i_a: 0.0, i_b: 0.0, i_c: 0.0 },
        };
        let (e, d) = if ell == 0 { (e0, d0) } else { (e1, d1) };
        let g = match samples.last() {
            None => e,
            Some(p) => {
                let (pe, pd) = if ell == 0 { (p.e0, p.d0) } else { (p.e1, p.d1) };
                p.g - pe + e + 0.5 * (s.t - p.t) * (pd + d)
            }
        };
        samples.push(EnergySample { t: s.t, e0, e1, d0, d1, g, a_mean: m.means().0, h: s.entropy_h(), interaction: inter });
    }
    let pick = |x: &EnergySample| if ell == 0 { (x.e0, x.d0) } else { (x.e1, x.d1) };
    let mut ratio_min = f64::INFINITY;
    let mut max_inc: f64 = 0.0;
    for p in samples.windows(2) {
        let ((ea, da), (eb, db)) = (pick(&p[0]), pick(&p[1]));
        let dt = p[1].t - p[0].t;
        let de = (eb - ea) / dt;
        let dbar = 0.5 * (da + db);
        if dbar > 0.0 {
            ratio_min = ratio_min.min(-de / dbar);
        }
        if ea > 0.0 {
            max_inc = max_inc.max((eb - ea) / ea);
        }
    }
    let delta = if ratio_min.is_finite() && ratio_min > 0.0 { 0.5 * ratio_min } else { 0.0 };
    let mut slack: f64 = 0.0;
    for p in samples.windows(2) {
        let ((ea, da), (eb, db)) = (pick(&p[0]), pick(&p[1]));
        let de = (eb - ea) / (p[1].t - p[0].t);
        let (ebar, dbar) = (0.5 * (ea + eb), 0.5 * (da + db));
        let excess = de + delta * dbar;
        if excess > 0.0 && ebar > 0.0 && dbar > 0.0 {
            slack = slack.max(excess / (ebar.sqrt() * dbar));
        }
    }
    let e_init = pick(&samples[0]).0;
    let g_max = samples.iter().map(|s| s.g).fold(0.0, f64::max);
    let g_ratio = if e_init > 0.0 { g_max / e_init } else { 0.0 };
    Ok(EnergyReport { ell, samples, delta, slack, max_energy_increase: max_inc, g_ratio })
}

// ---------------------------------------------------------------------------
// Decay fits
// ---------------------------------------------------------------------------

/// Result of a decay fit of `‖f(t)‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub regime: Regime,
    /// Hard: exponential rate `λ` in `‖f‖ ~ e^{−λt}`.  Soft: the exponent `p`
    /// in `‖f‖ ~ (1+t)^{p}` (negative for decay).
    pub rate: f64,
    pub r_squared: f64,
    /// Time window of the fit.
    pub window: (f64, f64),
    pub samples: usize,
    /// Set when `R² < 0.9`.
    pub unreliable: bool,
    /// Soft regime: second-order coefficient of a quadratic fit in
    /// `log(1+t)`, indicating truncation-induced curvature (0 for hard).
    pub curvature: f64,
}

/// Minimal number of samples a fit window must contain.
pub const MIN_FIT_SAMPLES: usize = 30;

/// Fits the decay of `norms` (pairs `(t, ‖f(t)‖)`) on `window`.
pub fn decay_fit(history: &[(f64, f64)], regime: Regime, window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = history.iter().copied().filter(|(t, _)| *t >= window.0 && *t <= window.1).collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::Config(format!(
            "decay fit needs ≥ {MIN_FIT_SAMPLES} samples in [{}, {}], got {}",
            window.0,
            window.1,
            pts.len()
        )));
    }
    let maxn = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    if maxn == 0.0 {
        return Ok(DecayFit { regime, rate: 0.0, r_squared: 1.0, window, samples: pts.len(), unreliable: false, curvature: 0.0 });
    }
    if pts.iter().any(|p| p.1 <= 0.0) {
        return Err(Error::Domain("norm history must be positive to fit a decay".into()));
    }
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let x: Vec<f64> = match regime {
        Regime::Hard => pts.iter().map(|p| p.0).collect(),
        Regime::Soft => pts.iter().map(|p| (1.0 + p.0).ln()).collect(),
    };
    let (_, slope, r2) = linear_fit(&x, &y);
    // A flat history has no variance to explain: a perfect zero-rate fit.
    let spread = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - y.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let r2 = if spread < 1e-12 { 1.0 } else { r2 };
    let slope = if spread < 1e-12 { 0.0 } else { slope };
    let (rate, curvature) = match regime {
        Regime::Hard => (-slope, 0.0),
        Regime::Soft => (slope, quadratic_coefficient(&x, &y)),
    };
    Ok(DecayFit { regime, rate, r_squared: r2, window, samples: pts.len(), unreliable: r2 < 0.9, curvature })
}

/// Leading coefficient of the least-squares parabola through `(x, y)`.
fn quadratic_coefficient(x: &[f64], y: &[f64]) -> f64 {
    let a = DMatrix::from_fn(x.len(), 3, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    ata.lu().solve(&atb).map_or(0.0, |c| c[2])
}

/// Soft-regime fit with an automatically detected window.
///
/// `reference` is the norm history on the working velocity box and `reduced`
/// the history of the same experiment on a smaller box with the same mesh
/// width.  Both are normalised by their value at `t_lo`; truncation of the
/// velocity domain is deemed to dominate from the first time the two
/// normalised histories differ by more than `tol` (relative).  A smaller box
/// feels the truncation earlier, so this onset is a conservative estimate for
/// the reference box.  The log–log fit is done on `[t_lo, min(t_hi, onset)]`.
pub fn soft_decay_fit(
    reference: &[(f64, f64)],
    reduced: &[(f64, f64)],
    t_lo: f64,
    t_hi: f64,
    tol: f64,
) -> Result<SoftDecayFit> {
    if reference.len() != reduced.len()
        || reference.iter().zip(reduced).any(|(a, b)| (a.0 - b.0).abs() > 1e-9 * (1.0 + a.0.abs()))
    {
        return Err(Error::Config("soft decay fit needs histories on the same time grid".into()));
    }
    let start = reference
        .iter()
        .position(|(t, _)| *t >= t_lo)
        .ok_or_else(|| Error::Config(format!("no samples at or after t = {t_lo}")))?;
    let (r0, q0) = (reference[start].1, reduced[start].1);
    if r0 <= 0.0 || q0 <= 0.0 {
        return Err(Error::Config("soft decay fit needs positive norms at the window start".into()));
    }
    let mut onset = None;
    let mut max_rel_diff: f64 = 0.0;
    for (a, b) in reference[start..].iter().zip(&reduced[start..]) {
        if a.0 > t_hi {
            break;
        }
        let rel = ((b.1 / q0) / (a.1 / r0) - 1.0).abs();
        if rel > tol {
            onset = Some(a.0);
            break;
        }
        max_rel_diff = max_rel_diff.max(rel);
    }
    let hi = onset.map_or(t_hi, |t| t.min(t_hi));
    let fit = decay_fit(reference, Regime::Soft, (t_lo, hi))?;
    Ok(SoftDecayFit { fit, onset, max_rel_diff })
}

/// Output of [`soft_decay_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftDecayFit {
    /// Log–log fit on the detected window.
    pub fit: DecayFit,
    /// Time at which truncation effects exceeded the tolerance, if any.
    pub onset: Option<f64>,
    /// Largest relative deviation between the normalised histories inside the window.
    pub max_rel_diff: f64,
}

// ---------------------------------------------------------------------------
// Picard iteration
// ---------------------------------------------------------------------------

/// Controls of the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    /// Final time `T*`.
    pub t_star: f64,
    /// Time steps on `[0, T*]`.
    pub steps: usize,
    /// Maximal iterate index.
    pub m_max: usize,
    /// Largest admissible `‖f_0‖_{L²}` (small-data precondition).
    pub small_data: f64,
    /// Divergence is declared when `G(f^m) > bound_factor · ‖f_0‖²`.
    pub bound_factor: f64,
    /// Iteration stops once the successive difference is below this value.
    pub tol: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { t_star: 0.5, steps: 10, m_max: 6, small_data: 0.5, bound_factor: 100.0, tol: 1e-10 }
    }
}

/// Diagnostics of one iterate `f^m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardIterate {
    pub m: usize,
    /// `G(f^m) = sup_t ‖f^m‖² + ∫_0^{T*} ⟨N f^m, f^m⟩`.
    pub g: f64,
    /// `sup_t ‖f^m − f^{m−1}‖` (zero for `m = 0`).
    pub diff: f64,
}

/// Iterate history and consistency data.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub iterates: Vec<PicardIterate>,
    /// Trajectory of the last iterate on the time grid.
    pub trajectory: Vec<ScalarField>,
    /// Geometric-mean ratio of successive differences (`< 1` for contraction).
    pub contraction: f64,
    /// Relative residual of the time-discrete equation for the last iterate.
    pub residual: f64,
}

/// Picard iteration `(∂_t + N) f^{m+1} + K f^m = Γ(f^m, f^{m+1})` with
/// `f^0 ≡ f_0`, discretised by implicit Euler in the new iterate:
/// `f^{m+1}_{k+1} = (I + dt N)^{−1}[f^{m+1}_k − dt K f^m_{k+1} + dt (I−P)Γ(f^m_k, f^{m+1}_k)]`.
/// `K = L_c − N` with the conservative `L_c`, so the fixed point coincides with
/// the nonlinear implicit-Euler scheme of [`Stepper`].
pub fn picard(
    f0: &ScalarField,
    cfg: &PicardConfig,
    setup: &CollisionSetup,
    l: &OperatorMatrix,
    n_matrix: &OperatorMatrix,
) -> Result<PicardReport> {
    picard_traced(f0, cfg, setup, l, n_matrix, |_| {})
}

/// [`picard`] with a callback receiving every iterate's diagnostics as soon as
/// it is available (including the one that triggers a divergence error).
pub fn picard_traced<C: FnMut(&PicardIterate)>(
    f0: &ScalarField,
    cfg: &PicardConfig,
    setup: &CollisionSetup,
    l: &OperatorMatrix,
    n_matrix: &OperatorMatrix,
    mut on_iterate: C,
) -> Result<PicardReport> {
    if cfg.steps == 0 || !(cfg.t_star > 0.0) {
        return Err(Error::Config("Picard iteration needs T* > 0 and at least one step".into()));
    }
    let norm0 = f0.l2();
    if norm0 > cfg.small_data {
        return Err(Error::Domain(format!("‖f_0‖ = {norm0:.3e} exceeds the small-data threshold {:.3e}", cfg.small_data)));
    }
    let dt = cfg.t_star / cfg.steps as f64;
    let stepper = Stepper::new(l, dt)?;
    let basis = &stepper.basis;
    let len = f0.grid.len();
    let k_matrix = &stepper.matrix.matrix - &n_matrix.matrix;
    let n_factor = factorize(DMatrix::identity(len, len) + &n_matrix.matrix * dt)?;
    let gamma = |g: &ScalarField, h: &ScalarField| -> Result<ScalarField> {
        Ok(basis.project(&setup.gamma_apply(g, h, None)?)?.qg)
    };
    let apply = |m: &DMatrix<f64>, g: &ScalarField| ScalarField {
        grid: g.grid,
        values: (m * DVector::from_column_slice(&g.values)).as_slice().to_vec(),
    };
    let g_of = |traj: &[ScalarField]| -> f64 {
        let sup = traj.iter().map(|f| f.inner(f)).fold(0.0, f64::max);
        let diss: f64 = traj.windows(2).map(|p| 0.5 * dt * (n_matrix.quadratic(&p[0]) + n_matrix.quadratic(&p[1]))).sum();
        sup + diss
    };
    let mut prev: Vec<ScalarField> = vec![f0.clone(); cfg.steps + 1];
    let mut iterates = vec![PicardIterate { m: 0, g: g_of(&prev), diff: 0.0 }];
    on_iterate(&iterates[0]);
    let bound = cfg.bound_factor * norm0 * norm0;
    for m in 1..=cfg.m_max {
        let mut next = Vec::with_capacity(cfg.steps + 1);
        next.push(f0.clone());
        for k in 0..cfg.steps {
            let cur = &next[k];
            let src = gamma(&prev[k], cur)?;
            let kf = apply(&k_matrix, &prev[k + 1]);
            let rhs: Vec<f64> = (0..len).map(|i| cur.values[i] - dt * kf.values[i] + dt * src.values[i]).collect();
            let sol = n_factor.solve(&DVector::from_vec(rhs));
            next.push(ScalarField::new(f0.grid, sol.as_slice().to_vec())?);
        }
        let diff = next.iter().zip(&prev).map(|(a, b)| a.lincomb(1.0, b, -1.0).l2()).fold(0.0, f64::max);
        let g = g_of(&next);
        iterates.push(PicardIterate { m, g, diff });
        on_iterate(&iterates[m]);
        if !g.is_finite() || g > bound {
            let hist: Vec<f64> = iterates.iter().map(|it| it.g).collect();
            return Err(Error::Divergence(format!("G(f^m) left the bound {bound:.3e}; G history {hist:?}")));
        }
        prev = next;
        if diff < cfg.tol {
            break;
        }
    }
    let diffs: Vec<f64> = iterates.iter().skip(1).map(|it| it.diff).filter(|d| *d > 0.0).collect();
    let contraction = if diffs.len() >= 2 {
        (diffs[diffs.len() - 1] / diffs[0]).powf(1.0 / (diffs.len() - 1) as f64)
    } else {
        0.0
    };
    // Residual of (f_{k+1} − f_k)/dt + L_c f_{k+1} − (I−P)Γ(f_k, f_k).
    let mut res: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..cfg.steps {
        let (a, b) = (&prev[k], &prev[k + 1]);
        let lb = stepper.matrix.apply(b);
        let src = gamma(a, a)?;
        let r: Vec<f64> = (0..len).map(|i| (b.values[i] - a.values[i]) / dt + lb.values[i] - src.values[i]).collect();
        let rf = ScalarField { grid: f0.grid, values: r };
        res = res.max(rf.l2());
        scale = scale.max(lb.l2()).max(b.lincomb(1.0 / dt, a, -1.0 / dt).l2());
    }
    let residual = if scale > 0.0 { res / scale } else { res };
    Ok(PicardReport { iterates, trajectory: prev, contraction, residual })
}

/// Sampled random smooth perturbation used by seeded runs: a finite sum of
/// Gaussian bumps with the given centres, widths and amplitudes.
pub fn bump_sum(grid: &VelocityGrid, bumps: &[([f64; 3], f64, f64)]) -> ScalarField {
    grid.sample(|v| {
        bumps
            .iter()
            .map(|(c, w, a)| {
                let d2: f64 = (0..grid.n).map(|i| (v[i] - c[i]).powi(2)).sum();
                a * (-0.5 * d2 / (w * w)).exp()
            })
            .sum()
    })
}
