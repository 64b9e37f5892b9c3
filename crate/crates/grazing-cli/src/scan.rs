//! `scan-gap`: spectral-gap dichotomy trend table over `(γ, s)` pairs.

use grazing::collision::CollisionSetup;
use grazing::kernel::KernelParams;
use grazing::linearized::{gap_dichotomy_scan, GapRow};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// CSV row of the scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub anchor: &'static str,
    pub gamma: f64,
    pub s: f64,
    pub classification: String,
    pub slope: f64,
    pub predicted_slope: f64,
    pub lower_bound: f64,
    /// Space-separated Rayleigh quotients, one per accepted radius.
    pub quotients: String,
    pub radii: String,
}

impl From<&GapRow> for ScanRow {
    fn from(r: &GapRow) -> Self {
        let join = |x: &[f64]| x.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(" ");
        Self {
            anchor: "spectral-gap-dichotomy",
            gamma: r.gamma,
            s: r.s,
            classification: r.classification.to_string(),
            slope: r.slope,
            predicted_slope: r.predicted_slope,
            lower_bound: r.lower_bound,
            quotients: join(&r.quotients),
            radii: join(&r.radii),
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Vec<GapRow>, CliError> {
    let base_params = cfg.kernel.params()?;
    let n = base_params.n;
    if cfg.scan.params.is_empty() {
        return Err(CliError::Config("scan.params is empty".into()));
    }
    let list = cfg
        .scan
        .params
        .iter()
        .map(|[gamma, s]| KernelParams::new(n, *s, *gamma, base_params.c_phi))
        .collect::<grazing::Result<Vec<_>>>()?;
    let base = CollisionSetup::standard(base_params, cfg.grid.grid(n)?, cfg.grid.angular_nodes)?;
    Ok(gap_dichotomy_scan(&base, &list, &cfg.scan.radii, cfg.scan.width)?)
}
