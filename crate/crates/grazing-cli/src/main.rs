//! `grazing`: batch entry points for the verification suites, the spectral-gap
//! scan and time evolution.
//!
//! Exit codes: `0` pass, `1` check failure, `2` configuration error,
//! `3` numerical divergence.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod report;
mod rng;
mod scan;
mod simulate;
mod validate;
mod verify;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{Overrides, RunConfig};
use error::CliError;
use report::{CheckRow, CheckSummary, Reporter};

#[derive(Debug, Parser)]
#[command(name = "grazing", version, about = "Verification and simulation of the non-cutoff Boltzmann operator near a Maxwellian")]
struct Cli {
    /// JSON configuration file (unknown keys are rejected).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed of every random suite.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Velocity grid points per axis.
    #[arg(long, global = true, value_name = "N")]
    points_per_axis: Option<usize>,
    /// Angular quadrature nodes.
    #[arg(long, global = true, value_name = "N")]
    angular_nodes: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Kernel, geometry and quadrature invariant suites.
    Validate,
    /// Property checks: representations, norms, lp, coercivity, entropy
    /// (defaults to the configured task list).
    Verify {
        #[arg(value_name = "TASK")]
        tasks: Vec<String>,
    },
    /// Spectral-gap dichotomy scan over the configured (gamma, s) list.
    ScanGap,
    /// Time evolution (linear, nonlinear or Picard) with energy tracking and a decay fit.
    Simulate,
}

#[derive(Debug, Serialize)]
struct ChecksReport<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    tasks: BTreeMap<&'a str, CheckSummary>,
}

fn print_rows(title: &str, rows: &[CheckRow]) {
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("[{}] {title}: {} checks, {failed} failed", if failed == 0 { "PASS" } else { "FAIL" }, rows.len());
    for r in rows.iter().filter(|r| !r.pass) {
        println!("    failed {}: {} (value {:.4e}, tolerance {:.4e})", r.anchor, r.check, r.value, r.tolerance);
    }
}

fn checks_outcome(failed: usize) -> Result<(), CliError> {
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Check(format!("{failed} check(s) failed")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let flags = Overrides { out: cli.out, seed: cli.seed, points_per_axis: cli.points_per_axis, angular_nodes: cli.angular_nodes };
    let cfg = RunConfig::load(cli.config.as_deref(), std::env::vars(), &flags)?;
    match cli.command {
        Command::Validate => {
            let rows = validate::run(&cfg)?;
            let out = Reporter::new(&cfg.out)?;
            out.csv("validate.csv", &rows)?;
            let summary = CheckSummary::of(&rows);
            let failed = summary.failed;
            out.json("validate.json", &ChecksReport { command: "validate", seed: cfg.seed, config: &cfg, tasks: BTreeMap::from([("validate", summary)]) })?;
            print_rows("validate", &rows);
            checks_outcome(failed)
        }
        Command::Verify { tasks } => {
            let names = if tasks.is_empty() { cfg.tasks.clone() } else { tasks };
            if names.is_empty() {
                return Err(CliError::Config("empty task list (give tasks on the command line or in `tasks`)".into()));
            }
            let parsed = names.iter().map(|t| verify::Task::parse(t)).collect::<Result<Vec<_>, _>>()?;
            let out = Reporter::new(&cfg.out)?;
            let mut summaries = BTreeMap::new();
            let mut failed = 0;
            for task in parsed {
                let rows = task.run(&cfg)?;
                out.csv(&format!("verify_{}.csv", task.name()), &rows)?;
                print_rows(task.name(), &rows);
                let s = CheckSummary::of(&rows);
                failed += s.failed;
                summaries.insert(task.name(), s);
            }
            out.json("verify_summary.json", &ChecksReport { command: "verify", seed: cfg.seed, config: &cfg, tasks: summaries })?;
            checks_outcome(failed)
        }
        Command::ScanGap => {
            let rows = scan::run(&cfg)?;
            let out = Reporter::new(&cfg.out)?;
            let table: Vec<scan::ScanRow> = rows.iter().map(scan::ScanRow::from).collect();
            out.csv("scan_gap.csv", &table)?;
            out.json("scan_gap.json", &rows)?;
            for r in &rows {
                println!("gamma {:>5} s {:>5}: {} (slope {:.3}, predicted {:.3}, lower bound {:.4e})", r.gamma, r.s, r.classification, r.slope, r.predicted_slope, r.lower_bound);
            }
            Ok(())
        }
        Command::Simulate => {
            let out = Reporter::new(&cfg.out)?;
            simulate::run(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
