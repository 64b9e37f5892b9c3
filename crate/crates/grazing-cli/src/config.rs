//! Run configuration: JSON file, `GRAZING_` environment overrides and
//! command-line flags, merged in that order over the shipped defaults.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::{Path, PathBuf};

use grazing::evolution::{PicardConfig, Scheme};
use grazing::kernel::KernelParams;
use grazing::quadrature::VelocityGrid;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

/// Prefix of environment variables overriding configuration keys; nested
/// keys are separated by a double underscore, e.g. `GRAZING_GRID__POINTS_PER_AXIS=48`.
pub const ENV_PREFIX: &str = "GRAZING_";

/// Kernel section: either `(s, gamma)` directly, or the inverse-power
/// exponent `p` (three dimensions), which takes precedence when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub n: usize,
    pub s: f64,
    pub gamma: f64,
    pub c_phi: f64,
    pub p: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { n: 2, s: 0.25, gamma: 0.0, c_phi: 1.0, p: None }
    }
}

impl KernelConfig {
    pub fn params(&self) -> Result<KernelParams, CliError> {
        let params = match self.p {
            Some(p) => KernelParams::from_inverse_power(p, self.n)?,
            None => KernelParams::new(self.n, self.s, self.gamma, self.c_phi)?,
        };
        Ok(params)
    }
}

/// Velocity grid and angular rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub r_cut: f64,
    pub points_per_axis: usize,
    pub angular_nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { r_cut: 8.0, points_per_axis: 32, angular_nodes: 16 }
    }
}

impl GridConfig {
    pub fn grid(&self, n: usize) -> Result<VelocityGrid, CliError> {
        self.grid_with(n, self.points_per_axis)
    }

    pub fn grid_with(&self, n: usize, points: usize) -> Result<VelocityGrid, CliError> {
        Ok(VelocityGrid::new(n, self.r_cut, points)?)
    }
}

/// Littlewood–Paley profile controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpConfig {
    /// Number of cancelled moments `M`.
    pub m: usize,
    /// Profile support radius `R`.
    pub r: f64,
    pub j_max: i32,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self { m: 2, r: 1.0 / 16.0, j_max: 5 }
    }
}

/// Outer grids of the trilinear-form comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrilinearConfig {
    pub r_cut: f64,
    pub points: usize,
    pub refined_points: usize,
}

impl Default for TrilinearConfig {
    fn default() -> Self {
        Self { r_cut: 6.0, points: 24, refined_points: 32 }
    }
}

/// Pass/fail thresholds of the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub moments: [f64; 3],
    pub kinematics: f64,
    pub representation: f64,
    pub b_eps_moment: f64,
    pub n_identity: f64,
    pub resolution_stability: f64,
    pub qj_slope_max: f64,
    pub entropy_floor: f64,
    pub entropy_mu_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            moments: [1e-4, 1e-3, 1e-2],
            kinematics: 1e-12,
            representation: 0.02,
            b_eps_moment: 1e-10,
            n_identity: 0.01,
            resolution_stability: 0.2,
            qj_slope_max: -1.7,
            entropy_floor: -1e-8,
            entropy_mu_factor: 10.0,
        }
    }
}

/// Spectral-gap scan: `(γ, s)` pairs, bump radii and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub params: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
    pub width: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            params: vec![[0.0, 0.25], [-1.0, 0.5], [-2.0, 0.3]],
            radii: vec![2.0, 3.0, 4.0, 5.0, 6.0],
            width: FRAC_1_SQRT_2,
        }
    }
}

/// What `simulate` integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Linear,
    Nonlinear,
    Picard,
}

/// Initial perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// Seeded Gaussian bumps with the null-space part removed.
    Bumps,
    /// `(1 + v_1)√μ`, a collision invariant.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub count: usize,
    pub amplitude: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { kind: InitialKind::Bumps, count: 2, amplitude: 0.3 }
    }
}

/// Spatial torus of transport runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub points: usize,
    pub length: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { points: 16, length: 2.0 * PI }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub mode: SimMode,
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    /// Weight order of the tracked energy (`0` or `1`).
    pub ell: u8,
    pub initial: InitialConfig,
    /// Present for transport-mode runs.
    pub transport: Option<TransportConfig>,
    /// Decay-fit window; defaults to `[T/10, T]` (hard) or `[1, T]` (soft).
    pub fit_window: Option<[f64; 2]>,
    pub picard: PicardConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            mode: SimMode::Linear,
            scheme: Scheme::Implicit,
            dt: 0.05,
            steps: 200,
            ell: 0,
            initial: InitialConfig::default(),
            transport: None,
            fit_window: None,
            picard: PicardConfig::default(),
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    pub lp: LpConfig,
    pub trilinear: TrilinearConfig,
    /// Default task list of `verify`.
    pub tasks: Vec<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub scan: ScanConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::default(),
            grid: GridConfig::default(),
            lp: LpConfig::default(),
            trilinear: TrilinearConfig::default(),
            tasks: ["representations", "norms", "lp", "coercivity", "entropy"].map(String::from).to_vec(),
            out: PathBuf::from("out"),
            seed: 0,
            tolerances: Tolerances::default(),
            scan: ScanConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

/// Flag overrides (highest precedence).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub points_per_axis: Option<usize>,
    pub angular_nodes: Option<usize>,
}

impl RunConfig {
    /// Defaults ← file ← environment ← flags, then validation.
    pub fn load<I>(path: Option<&Path>, env: I, flags: &Overrides) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut value = serde_json::to_value(Self::default()).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
            if !file.is_object() {
                return Err(CliError::Config("config file must hold a JSON object".into()));
            }
            merge(&mut value, file);
        }
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        env.sort();
        for (key, raw) in env {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|p| p.to_ascii_lowercase()).collect();
            if path.iter().any(|p| p.is_empty()) {
                return Err(CliError::Config(format!("malformed override variable {key}")));
            }
            // JSON scalars/arrays/objects are taken as typed; anything else
            // (including the word `null`, a valid enum tag) is a string.
            let parsed = match serde_json::from_str::<Value>(&raw) {
                Ok(v) if !v.is_null() => v,
                _ => Value::String(raw),
            };
            set_path(&mut value, &path, parsed)?;
        }
        let mut cfg: Self = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(out) = &flags.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
        }
        if let Some(p) = flags.points_per_axis {
            cfg.grid.points_per_axis = p;
        }
        if let Some(a) = flags.angular_nodes {
            cfg.grid.angular_nodes = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every module precondition that can be checked without computing.
    pub fn validate(&self) -> Result<(), CliError> {
        let params = self.kernel.params()?;
        self.grid.grid(params.n)?;
        if self.grid.angular_nodes < 2 {
            return Err(CliError::Config(format!("angular_nodes = {} (need at least 2)", self.grid.angular_nodes)));
        }
        VelocityGrid::new(params.n, self.trilinear.r_cut, self.trilinear.points)?;
        if self.trilinear.refined_points <= self.trilinear.points {
            return Err(CliError::Config("trilinear.refined_points must exceed trilinear.points".into()));
        }
        if self.lp.m == 0 || !(self.lp.r > 0.0) || self.lp.j_max < 2 {
            return Err(CliError::Config("lp needs m ≥ 1, r > 0 and j_max ≥ 2".into()));
        }
        for t in &self.tasks {
            crate::verify::Task::parse(t)?;
        }
        for [gamma, s] in &self.scan.params {
            KernelParams::new(params.n, *s, *gamma, 1.0)?;
        }
        if !(self.scan.width > 0.0) {
            return Err(CliError::Config("scan.width must be positive".into()));
        }
        let sim = &self.simulate;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) || sim.steps == 0 {
            return Err(CliError::Config("simulate needs dt > 0 and steps ≥ 1".into()));
        }
        if sim.ell > 1 {
            return Err(CliError::Config(format!("simulate.ell = {} (supported: 0, 1)", sim.ell)));
        }
        if sim.mode == SimMode::Picard && sim.transport.is_some() {
            return Err(CliError::Config("the Picard iteration runs in homogeneous mode only".into()));
        }
        if let Some(t) = sim.transport {
            if t.points < 2 || !(t.length > 0.0) {
                return Err(CliError::Config("transport needs ≥ 2 points and a positive length".into()));
            }
        }
        if let Some([a, b]) = sim.fit_window {
            if !(b > a) {
                return Err(CliError::Config("fit_window must be increasing".into()));
            }
        }
        Ok(())
    }
}

/// Deep merge of JSON objects (`over` wins).
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Map::new());
                cur.as_object_mut().expect("just created")
            }
            _ => return Err(CliError::Config(format!("override path {} crosses a non-object key", path.join(".")))),
        };
        if i + 1 == path.len() {
            obj.insert(key.clone(), value);
            return Ok(());
        }
        cur = obj.entry(key.clone()).or_insert(Value::Null);
    }
    Ok(())
}
