//! End-to-end behaviour of the `grazing` binary: exit codes, config layering,
//! output files and determinism (small grids keep every run short).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{"grid":{"r_cut":6,"points_per_axis":16,"angular_nodes":8},"simulate":{"steps":40,"dt":0.1}}"#;

fn grazing(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_grazing"));
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("GRAZING_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

fn with_config(text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), text).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_defaults_pass_and_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = grazing(dir.path(), &["validate", "--out", "out"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/validate.csv")).unwrap();
    assert!(csv.starts_with("anchor,check,value,tolerance,pass\n"));
    assert!(csv.contains("collision-kinematics"));
    assert_eq!(json(&dir.path().join("out/validate.json"))["tasks"]["validate"]["failed"], 0);
}

#[test]
fn check_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = grazing(dir.path(), &["validate", "--out", "out"], &[("GRAZING_TOLERANCES__KINEMATICS", "1e-30")]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(dir.path().join("out/validate.csv").exists());
}

#[test]
fn inverse_power_two_is_rejected() {
    let dir = with_config(r#"{"kernel":{"p":2}}"#);
    let o = grazing(dir.path(), &["--config", "cfg.json", "validate"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not well defined"), "{}", stderr(&o));
}

#[test]
fn singularity_exponent_out_of_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = grazing(dir.path(), &["validate"], &[("GRAZING_KERNEL__S", "1.5")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("s = 1.5"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected_from_file_and_env() {
    let dir = with_config(r#"{"grid":{"pointz":3}}"#);
    let o = grazing(dir.path(), &["--config", "cfg.json", "validate"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pointz"));
    let o = grazing(dir.path(), &["validate"], &[("GRAZING_BOGUS", "1")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = grazing(dir.path(), &["--config", "absent.json", "validate"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn env_and_flag_overrides_layer_over_the_file() {
    let dir = with_config(r#"{"seed":3,"out":"from_file"}"#);
    let o = grazing(dir.path(), &["--config", "cfg.json", "validate"], &[("GRAZING_SEED", "5")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("from_file/validate.json"))["seed"], 5);
    let o = grazing(dir.path(), &["--config", "cfg.json", "--seed", "9", "--out", "flag", "validate"], &[("GRAZING_SEED", "5")]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("flag/validate.json"))["seed"], 9);
}

#[test]
fn empty_task_list_is_a_config_error() {
    let dir = with_config(r#"{"tasks":[]}"#);
    let o = grazing(dir.path(), &["--config", "cfg.json", "verify"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = grazing(dir.path(), &["verify", "nonsense"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_scan_list_is_a_config_error() {
    for text in [r#"{"scan":{"params":[[0]]}}"#, r#"{"scan":{"params":[]}}"#, r#"{"scan":{"params":[[0,1.5]]}}"#] {
        let dir = with_config(text);
        let o = grazing(dir.path(), &["--config", "cfg.json", "scan-gap"], &[]);
        assert_eq!(o.status.code(), Some(2), "{text}: {}", stderr(&o));
    }
}

#[test]
fn verify_lp_writes_task_csv_and_summary() {
    let dir = with_config(SMALL);
    let o = grazing(dir.path(), &["--config", "cfg.json", "verify", "lp"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/verify_lp.csv")).unwrap();
    assert!(csv.contains("lp-qj-decay") && csv.contains("lp-square-function"));
    assert_eq!(json(&dir.path().join("out/verify_summary.json"))["tasks"]["lp"]["failed"], 0);
}

#[test]
fn scan_gap_classifies_the_two_regimes() {
    let dir = with_config(r#"{"grid":{"r_cut":6,"points_per_axis":16,"angular_nodes":8},"scan":{"params":[[0,0.25],[-2,0.3]]}}"#);
    let o = grazing(dir.path(), &["--config", "cfg.json", "scan-gap"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = json(&dir.path().join("out/scan_gap.json"));
    assert_eq!(rows[0]["classification"], "gap");
    assert_eq!(rows[1]["classification"], "no gap");
    assert!(fs::read_to_string(dir.path().join("out/scan_gap.csv")).unwrap().contains("spectral-gap-dichotomy"));
}

#[test]
fn simulate_is_deterministic_for_a_fixed_seed() {
    let dir = with_config(SMALL);
    for out in ["a", "b"] {
        let o = grazing(dir.path(), &["--config", "cfg.json", "--seed", "42", "--out", out, "simulate"], &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["trajectory.csv", "decay.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let o = grazing(dir.path(), &["--config", "cfg.json", "--seed", "43", "--out", "c", "simulate"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(fs::read(dir.path().join("a/trajectory.csv")).unwrap(), fs::read(dir.path().join("c/trajectory.csv")).unwrap());
}

#[test]
fn hard_decay_rate_tracks_the_first_positive_eigenvalue() {
    let dir = with_config(SMALL);
    let o = grazing(dir.path(), &["--config", "cfg.json", "simulate"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d = json(&dir.path().join("out/decay.json"));
    let rate = d["rate"].as_f64().unwrap();
    let lambda = d["smallest_positive_eigenvalue"].as_f64().unwrap();
    assert!(rate >= 0.9 * lambda, "rate {rate} vs lambda {lambda}");
    assert!(d["r_squared"].as_f64().unwrap() > 0.99);
}

#[test]
fn null_space_data_does_not_decay() {
    let dir = with_config(SMALL);
    let o = grazing(dir.path(), &["--config", "cfg.json", "simulate"], &[("GRAZING_SIMULATE__INITIAL__KIND", "null")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d = json(&dir.path().join("out/decay.json"));
    assert!(d["rate"].as_f64().unwrap().abs() < 1e-6, "{d}");
    let (a, b) = (d["initial_norm"].as_f64().unwrap(), d["final_norm"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-8 * a);
}

#[test]
fn explicit_scheme_reduces_dt_and_records_a_note() {
    let dir = with_config(SMALL);
    let o = grazing(
        dir.path(),
        &["--config", "cfg.json", "simulate"],
        &[("GRAZING_SIMULATE__SCHEME", "explicit"), ("GRAZING_SIMULATE__DT", "1.0"), ("GRAZING_SIMULATE__STEPS", "3")],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("CFL"));
    let meta = json(&dir.path().join("out/run.json"));
    assert!(meta["dt"].as_f64().unwrap() < 1.0);
    assert!(meta["notes"][0].as_str().unwrap().contains("stability bound"));
    let steps = meta["steps"].as_f64().unwrap();
    assert!((meta["dt"].as_f64().unwrap() * steps - 3.0).abs() < 1e-9, "final time preserved");
}

#[test]
fn nonlinear_run_refuses_large_data() {
    let dir = with_config(SMALL);
    let o = grazing(
        dir.path(),
        &["--config", "cfg.json", "simulate"],
        &[("GRAZING_SIMULATE__MODE", "nonlinear"), ("GRAZING_SIMULATE__INITIAL__AMPLITUDE", "30")],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("small-data"));
}

#[test]
fn transport_run_conserves_macroscopic_means() {
    let dir = with_config(
        r#"{"grid":{"r_cut":6,"points_per_axis":14,"angular_nodes":6},"simulate":{"steps":10,"dt":0.05,"transport":{"points":8,"length":6.283185307179586}}}"#,
    );
    let o = grazing(dir.path(), &["--config", "cfg.json", "simulate"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("out/trajectory.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "a_mean").unwrap();
    for rec in rdr.records() {
        let a: f64 = rec.unwrap()[col].parse().unwrap();
        assert!(a.abs() < 1e-10);
    }
    assert!(json(&dir.path().join("out/run.json"))["transport"].is_object());
}

#[test]
fn picard_divergence_exits_three_with_a_dump() {
    let dir = with_config(
        r#"{"grid":{"r_cut":5,"points_per_axis":14,"angular_nodes":6},"simulate":{"mode":"picard","initial":{"kind":"bumps","count":2,"amplitude":30},"picard":{"t_star":2.0,"steps":10,"small_data":1e9}}}"#,
    );
    let o = grazing(dir.path(), &["--config", "cfg.json", "simulate"], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let dump = json(&dir.path().join("out/picard_divergence.json"));
    assert!(dump["iterates"].as_array().unwrap().len() >= 2);
    assert!(dump["error"].as_str().unwrap().contains("divergence"));
}
