//! Matrix discretisation of the linearised operator, the null-space projection,
//! coercivity probes and the spectral-gap dichotomy scan.
//!
//! Two assemblies are offered:
//!
//! * [`AssemblyForm::Weak`] — the Galerkin form of the quadratic identity
//!   `⟨Lg, g⟩ = ¼ ∫∫∫ B (M'_* g' + M' g'_* − M_* g − M g_*)²` with the
//!   interpolation stencils of the grid; the matrix is a sum of rank-one
//!   positive terms, hence symmetric positive semi-definite by construction.
//! * [`AssemblyForm::Collocation`] — the strong form of `L` at grid nodes with
//!   interpolated post-collisional values (the exact action of
//!   [`CollisionSetup::l_apply`] on sampled fields), symmetrised afterwards with
//!   the asymmetry reported.
//!
//! Matrices act on nodal values: `(L g)(v_i) ≈ Σ_j L_ij g(v_j)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::collision::{transverse_frame, CollisionSetup};
use crate::error::{Error, Result};
use crate::geometry::{add, axpy, bracket, norm, norm2, scale, sub, Vector};
use crate::kernel::{sqrt_maxwellian, KernelParams};
use crate::norms::{nsg_norm, Bump, NormConfig, PairRule};
use crate::quadrature::{Field, ScalarField, VelocityGrid};

/// Orthonormalised null space `{M, v_1 M, …, v_n M, |v|² M}` of `L` on a grid.
#[derive(Debug, Clone)]
pub struct NullBasis {
    pub grid: VelocityGrid,
    /// The `n + 2` orthonormal vectors (grid inner product).
    pub vectors: Vec<ScalarField>,
    /// The raw spanning fields in the order `M, v_i M, |v|² M`.
    pub raw: Vec<ScalarField>,
    /// Cholesky factor of the Gram matrix of the raw fields.
    gram: DMatrix<f64>,
}

/// Decomposition `g = Pg + (I − P)g` with the macroscopic coefficients
/// `Pg = (a + b·v + c|v|²) M`.
#[derive(Debug, Clone)]
pub struct NullProjection {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: f64,
    pub pg: ScalarField,
    pub qg: ScalarField,
}

impl NullBasis {
    pub fn new(grid: VelocityGrid) -> Result<Self> {
        let n = grid.n;
        let mut raw = vec![grid.sample(|v| sqrt_maxwellian(v, n))];
        for i in 0..n {
            raw.push(grid.sample(move |v| v[i] * sqrt_maxwellian(v, n)));
        }
        raw.push(grid.sample(|v| norm2(v) * sqrt_maxwellian(v, n)));
        let k = raw.len();
        let gram = DMatrix::from_fn(k, k, |i, j| raw[i].inner(&raw[j]));
        // Modified Gram–Schmidt, twice for robustness.
        let mut vectors: Vec<ScalarField> = Vec::with_capacity(k);
        for r in &raw {
            let mut v = r.clone();
            for _ in 0..2 {
                for e in &vectors {
                    let c = v.inner(e);
                    v = v.lincomb(1.0, e, -c);
                }
            }
            let nv = v.l2();
            if nv < 1e-12 {
                return Err(Error::Numerical("null basis is degenerate on this grid".into()));
            }
            vectors.push(v.scaled(1.0 / nv));
        }
        Ok(Self { grid, vectors, raw, gram })
    }

    /// Dimension `n + 2`.
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Gram matrix of the orthonormal vectors (the identity up to rounding).
    pub fn gram_of_vectors(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |i, j| self.vectors[i].inner(&self.vectors[j]))
    }

    /// `Pg` and `(I − P)g` with the coefficients `a, b, c`.
    pub fn project(&self, g: &ScalarField) -> Result<NullProjection> {
        if g.grid != self.grid {
            return Err(Error::Domain("field and null basis live on different grids".into()));
        }
        let k = self.dim();
        let rhs = DVector::from_fn(k, |i, _| self.raw[i].inner(g));
        let coef = self
            .gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("null-space Gram matrix not positive definite".into()))?
            .solve(&rhs);
        let mut pg = ScalarField::zeros(self.grid);
        for (i, r) in self.raw.iter().enumerate() {
            pg = pg.lincomb(1.0, r, coef[i]);
        }
        let qg = g.lincomb(1.0, &pg, -1.0);
        let n = self.grid.n;
        Ok(NullProjection { a: coef[0], b: (1..=n).map(|i| coef[i]).collect(), c: coef[n + 1], pg, qg })
    }

    /// Orthogonal projector `P` as a dense matrix on nodal values.
    pub fn projector(&self) -> DMatrix<f64> {
        let len = self.grid.len();
        let hn = self.grid.cell_volume();
        let mut p = DMatrix::zeros(len, len);
        for e in &self.vectors {
            let col = DVector::from_column_slice(&e.values);
            p += (&col * col.transpose()) * hn;
        }
        p
    }
}

/// Which discretisation produced an [`OperatorMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssemblyForm {
    Weak,
    Collocation,
}

/// Dense matrix of a discretised operator acting on nodal values.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub grid: VelocityGrid,
    pub matrix: DMatrix<f64>,
    pub form: AssemblyForm,
    pub symmetrized: bool,
    /// `‖A − Aᵀ‖_F / ‖A‖_F` before symmetrisation.
    pub asymmetry: f64,
}

/// Spectrum of a symmetric operator matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl OperatorMatrix {
    fn finish(grid: VelocityGrid, mut matrix: DMatrix<f64>, form: AssemblyForm, max_asym: f64) -> Result<Self> {
        let fro = matrix.norm();
        let asym = if fro > 0.0 { (&matrix - matrix.transpose()).norm() / fro } else { 0.0 };
        if asym > max_asym {
            return Err(Error::Accuracy(format!("assembled matrix asymmetry {asym:.3e} exceeds {max_asym:.3e}")));
        }
        matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { grid, matrix, form, symmetrized: true, asymmetry: asym })
    }

    /// Matrix-vector product on a sampled field.
    pub fn apply(&self, g: &ScalarField) -> ScalarField {
        let x = DVector::from_column_slice(&g.values);
        ScalarField { grid: self.grid, values: (&self.matrix * x).as_slice().to_vec() }
    }

    /// Quadratic form `⟨A g, g⟩` with the grid inner product.
    pub fn quadratic(&self, g: &ScalarField) -> f64 {
        self.apply(g).inner(g)
    }

    /// Symmetric eigen-decomposition with ascending eigenvalues.
    pub fn spectrum(&self) -> Spectrum {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.matrix.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Spectrum { values, vectors }
    }

    /// Spectral norm estimate (largest absolute eigenvalue bound by the Frobenius norm).
    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// `(I − P) A (I − P)`: removes the discretisation residue on the null space.
    pub fn conservative(&self, basis: &NullBasis) -> Self {
        let len = self.grid.len();
        let q = DMatrix::identity(len, len) - basis.projector();
        let m = &q * &self.matrix * &q;
        Self { matrix: (&m + m.transpose()) * 0.5, ..self.clone() }
    }

    /// Writes the matrix as a flat little-endian binary file: two `u64`
    /// dimensions (rows, columns) followed by row-major `f64` entries.
    pub fn dump<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let io = |e: std::io::Error| Error::Config(format!("cannot write matrix dump: {e}"));
        let mut buf = Vec::with_capacity(16 + 8 * self.matrix.len());
        buf.extend_from_slice(&(self.matrix.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.matrix.ncols() as u64).to_le_bytes());
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                buf.extend_from_slice(&self.matrix[(r, c)].to_le_bytes());
            }
        }
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&buf).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

/// Visits the angular nodes of the pair `(v, v_*)` with the full (paired)
/// rule: `f(v', v'_*, weight)` where `weight = hⁿ Φ(|v−v_*|) b w_σ`.
#[inline(always)]
fn pair_nodes<F: FnMut(&Vector, &Vector, f64)>(setup: &CollisionSetup, table: &[([f64; 3], f64)], v: &Vector, vs: &Vector, mut f: F) {
    let n = setup.grid.n;
    let u = sub(v, vs);
    let r = norm(&u);
    let k = scale(1.0 / r, &u);
    let (e1, e2) = transverse_frame(n, &k);
    let pref = setup.grid.cell_volume() * setup.params.phi(r);
    let mid = scale(0.5, &add(v, vs));
    let hr = 0.5 * r;
    for (loc, bw) in table {
        let sigma = axpy(&axpy(&scale(loc[0], &k), loc[1], &e1), loc[2], &e2);
        f(&axpy(&mid, hr, &sigma), &axpy(&mid, -hr, &sigma), pref * bw);
    }
}

fn angular_table(setup: &CollisionSetup) -> Vec<([f64; 3], f64)> {
    setup
        .rule
        .active_nodes(setup.compensation)
        .into_iter()
        .filter_map(|(i, mult)| {
            let node = &setup.rule.nodes[i];
            let b = setup.params.b_of_theta(node.theta);
            (b != 0.0).then_some((node.local, mult * node.weight * b))
        })
        .collect()
}

/// Sparse vector with at most `2·4ⁿ + 2` entries.
struct Sparse {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Sparse {
    fn with_capacity(c: usize) -> Self {
        Self { idx: Vec::with_capacity(c), val: Vec::with_capacity(c) }
    }
    fn clear(&mut self) {
        self.idx.clear();
        self.val.clear();
    }
    fn push_stencil(&mut self, grid: &VelocityGrid, x: &Vector, c: f64) {
        let mut idx = [0usize; 64];
        let mut w = [0.0f64; 64];
        let m = grid.stencil(x, &mut idx, &mut w);
        for k in 0..m {
            self.idx.push(idx[k]);
            self.val.push(c * w[k]);
        }
    }
    fn push(&mut self, i: usize, c: f64) {
        self.idx.push(i);
        self.val.push(c);
    }
    /// `A += c · d dᵀ`.
    fn rank_one(&self, a: &mut DMatrix<f64>, c: f64) {
        let nrows = a.nrows();
        let data = a.as_mut_slice();
        for (p, &ip) in self.idx.iter().enumerate() {
            let cv = c * self.val[p];
            let col = &mut data[ip * nrows..(ip + 1) * nrows];
            for (q, &iq) in self.idx.iter().enumerate() {
                col[iq] += cv * self.val[q];
            }
        }
    }
}

/// Assembles the matrix of `L`.
pub fn assemble(setup: &CollisionSetup, form: AssemblyForm) -> Result<OperatorMatrix> {
    let grid = setup.grid;
    if grid.n == 2 && grid.points_per_axis > 64 || grid.n == 3 && grid.points_per_axis > 16 {
        return Err(Error::Refused(format!("grid with {} nodes exceeds the dense desk-scale limit", grid.len())));
    }
    match form {
        AssemblyForm::Weak => assemble_weak(setup),
        AssemblyForm::Collocation => assemble_collocation(setup),
    }
}

fn assemble_weak(setup: &CollisionSetup) -> Result<OperatorMatrix> {
    let grid = setup.grid;
    let n = grid.n;
    let len = grid.len();
    let table = angular_table(setup);
    let m = setup.m_on_grid();
    let mut a = DMatrix::<f64>::zeros(len, len);
    let mut d = Sparse::with_capacity(2 * 64 + 2);
    // Ordered pairs (i, j) and (j, i) share the same nodes with σ ↦ −σ, which
    // leaves the difference vector unchanged: visit i < j with weight 2·¼.
    for i in 0..len {
        let v = grid.node(i);
        for j in (i + 1)..len {
            let vs = grid.node(j);
            pair_nodes(setup, &table, &v, &vs, |vp, vsp, w| {
                d.clear();
                d.push_stencil(&grid, vp, sqrt_maxwellian(vsp, n));
                d.push_stencil(&grid, vsp, sqrt_maxwellian(vp, n));
                d.push(i, -m[j]);
                d.push(j, -m[i]);
                d.rank_one(&mut a, 0.5 * w);
            });
        }
    }
    OperatorMatrix::finish(grid, a, AssemblyForm::Weak, 1e-10)
}

fn assemble_collocation(setup: &CollisionSetup) -> Result<OperatorMatrix> {
    let grid = setup.grid;
    let n = grid.n;
    let len = grid.len();
    let table = angular_table(setup);
    let m = setup.m_on_grid();
    let mut a = DMatrix::<f64>::zeros(len, len);
    let mut idx = [0usize; 64];
    let mut wts = [0.0f64; 64];
    let tiny = 1e-9 * grid.h;
    for i in 0..len {
        let v = grid.node(i);
        for j in 0..len {
            let vs = grid.node(j);
            if norm(&sub(&v, &vs)) < tiny {
                continue;
            }
            let ms = m[j];
            pair_nodes(setup, &table, &v, &vs, |vp, vsp, w| {
                let c = w * ms;
                let mp = sqrt_maxwellian(vp, n);
                let msp = sqrt_maxwellian(vsp, n);
                let cnt = grid.stencil(vp, &mut idx, &mut wts);
                for k in 0..cnt {
                    a[(i, idx[k])] -= c * msp * wts[k];
                }
                let cnt = grid.stencil(vsp, &mut idx, &mut wts);
                for k in 0..cnt {
                    a[(i, idx[k])] -= c * mp * wts[k];
                }
                a[(i, i)] += c * ms;
                a[(i, j)] += c * m[i];
            });
        }
    }
    OperatorMatrix::finish(grid, a, AssemblyForm::Collocation, 0.05)
}

/// Weak-form matrices of the split `L = N + K`: `N` from
/// `⟨Ng, g⟩ = ½∫∫∫ B M'_* M_* (g' − g)² + ∫ ν̃ g²` and `K = L − N`.
pub fn assemble_split(setup: &CollisionSetup, l: &OperatorMatrix) -> Result<(OperatorMatrix, OperatorMatrix)> {
    let grid = setup.grid;
    let n = grid.n;
    let len = grid.len();
    let table = angular_table(setup);
    let m = setup.m_on_grid();
    let mut a = DMatrix::<f64>::zeros(len, len);
    let mut d = Sparse::with_capacity(64 + 1);
    for i in 0..len {
        let v = grid.node(i);
        for j in 0..len {
            if i == j {
                continue;
            }
            let vs = grid.node(j);
            pair_nodes(setup, &table, &v, &vs, |vp, vsp, w| {
                d.clear();
                d.push_stencil(&grid, vp, 1.0);
                d.push(i, -1.0);
                d.rank_one(&mut a, 0.5 * w * sqrt_maxwellian(vsp, n) * m[j]);
            });
        }
        a[(i, i)] += setup.nu_tilde(&v);
    }
    let nmat = OperatorMatrix::finish(grid, a, AssemblyForm::Weak, 1e-10)?;
    let kmat = OperatorMatrix {
        matrix: &l.matrix - &nmat.matrix,
        grid,
        form: AssemblyForm::Weak,
        symmetrized: true,
        asymmetry: 0.0,
    };
    Ok((nmat, kmat))
}

/// Result of a coercivity probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    /// `min ⟨Lg,g⟩ / |(I−P)g|²_{N^{s,γ}}` over the suite.
    pub delta0: f64,
    /// `max` of the same ratio.
    pub c_upper: f64,
    pub ratios: Vec<Option<f64>>,
    /// Number of fields skipped because `(I − P)g` vanishes.
    pub skipped: usize,
}

/// Rayleigh ratios `⟨Lg, g⟩ / |(I−P)g|²_{N^{s,γ}}` over a suite of fields.
pub fn coercivity_probe(
    l: &OperatorMatrix,
    basis: &NullBasis,
    suite: &[ScalarField],
    params: &KernelParams,
    rule: &PairRule,
    tol: f64,
) -> Result<CoercivityReport> {
    let cfg = NormConfig::new(*params, 0.0);
    let mut ratios = Vec::with_capacity(suite.len());
    let mut skipped = 0;
    for g in suite {
        let proj = basis.project(g)?;
        let q = proj.qg;
        if q.l2() <= 1e-10 * g.l2().max(1e-300) {
            ratios.push(None);
            skipped += 1;
            continue;
        }
        let rq = l.quadratic(&q);
        if rq < -tol * q.l2().powi(2) {
            return Err(Error::Accuracy(format!("negative Rayleigh value {rq:.3e}: assembly problem")));
        }
        let nn = nsg_norm(&q, &q.grid, &cfg, rule)?;
        ratios.push(Some(rq / (nn * nn)));
    }
    let vals: Vec<f64> = ratios.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::Domain("every field of the suite lies in the null space".into()));
    }
    Ok(CoercivityReport {
        delta0: vals.iter().copied().fold(f64::INFINITY, f64::min),
        c_upper: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ratios,
        skipped,
    })
}

/// Classification of a parameter set by the bump Rayleigh quotients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapClass {
    #[serde(rename = "gap")]
    Gap,
    #[serde(rename = "gap(boundary-adjacent)")]
    BoundaryAdjacent,
    #[serde(rename = "no gap")]
    NoGap,
    #[serde(rename = "indeterminate")]
    Indeterminate,
}

impl std::fmt::Display for GapClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GapClass::Gap => "gap",
            GapClass::BoundaryAdjacent => "gap(boundary-adjacent)",
            GapClass::NoGap => "no gap",
            GapClass::Indeterminate => "indeterminate",
        })
    }
}

/// One row of the dichotomy scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub gamma: f64,
    pub s: f64,
    pub radii: Vec<f64>,
    pub quotients: Vec<f64>,
    /// Least-squares slope of `log Q` against `log⟨r⟩`.
    pub slope: f64,
    /// `γ + 2s`, the slope expected when no gap is present.
    pub predicted_slope: f64,
    /// Smallest quotient over the radii.
    pub lower_bound: f64,
    pub classification: GapClass,
    /// Radii rejected because the bump would be clipped by the box.
    pub rejected: Vec<f64>,
}

/// Slope threshold separating the classes.
pub const GAP_SLOPE_BAND: f64 = 0.15;

/// Least-squares line `y = a + b x`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (my - slope * mx, slope, r2)
}

/// Rayleigh quotient `⟨L b, b⟩ / |(I − P) b|²` of a unit-width Gaussian bump
/// centred at `r e_1`, with `L` evaluated in strong form on the grid nodes
/// where the bump is not negligible.
pub fn bump_quotient(setup: &CollisionSetup, basis: &NullBasis, r: f64, width: f64) -> Result<f64> {
    let grid = setup.grid;
    let mut center = [0.0; 3];
    center[0] = r;
    let bump = Bump::new(center, width);
    let reach = 6.0 * width;
    let pts: Vec<Vector> = grid.nodes().into_iter().filter(|v| norm(&sub(v, &center)) <= reach).collect();
    let lb = setup.l_at(&bump, &pts);
    let hn = grid.cell_volume();
    let num: f64 = pts.iter().zip(&lb).map(|(v, l)| bump.eval(v) * l).sum::<f64>() * hn;
    let sampled = grid.sample(|v| bump.eval(v));
    let q = basis.project(&sampled)?.qg;
    let den = q.inner(&q);
    if den <= 0.0 {
        return Err(Error::Numerical("bump lies in the null space".into()));
    }
    Ok(num / den)
}

/// Spectral-gap dichotomy scan over parameter sets and bump radii.
pub fn gap_dichotomy_scan(base: &CollisionSetup, params_list: &[KernelParams], radii: &[f64], width: f64) -> Result<Vec<GapRow>> {
    let basis = NullBasis::new(base.grid)?;
    let limit = base.grid.r_cut - 2.0;
    let (ok, rejected): (Vec<f64>, Vec<f64>) = radii.iter().partition(|&&r| (0.0..=limit).contains(&r));
    if ok.len() < 2 {
        return Err(Error::Config(format!(
            "fewer than two bump radii fit into [0, {limit}] (r_cut − 2); rejected {rejected:?}"
        )));
    }
    let mut rows = Vec::with_capacity(params_list.len());
    for p in params_list {
        let setup = base.with_params(*p)?;
        let quotients = ok.iter().map(|&r| bump_quotient(&setup, &basis, r, width)).collect::<Result<Vec<_>>>()?;
        let lx: Vec<f64> = ok.iter().map(|&r| bracket(&[r, 0.0, 0.0]).ln()).collect();
        let ly: Vec<f64> = quotients.iter().map(|q| q.max(1e-300).ln()).collect();
        let (_, slope, _) = linear_fit(&lx, &ly);
        let lower = quotients.iter().copied().fold(f64::INFINITY, f64::min);
        let decreasing = quotients.windows(2).all(|w| w[1] < w[0]);
        let classification = if lower <= 0.0 {
            GapClass::Indeterminate
        } else if slope > GAP_SLOPE_BAND {
            GapClass::Gap
        } else if slope.abs() <= GAP_SLOPE_BAND {
            GapClass::BoundaryAdjacent
        } else if decreasing {
            GapClass::NoGap
        } else {
            GapClass::Indeterminate
        };
        rows.push(GapRow {
            gamma: p.gamma,
            s: p.s,
            radii: ok.clone(),
            quotients,
            slope,
            predicted_slope: p.gamma + 2.0 * p.s,
            lower_bound: lower,
            classification,
            rejected: rejected.clone(),
        });
    }
    Ok(rows)
}
