use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dipolarbus"));
    c.env_remove("DIPOLARBUS_WORKERS");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_CHAIN: &str = r#"{
  "version": 1,
  "geometry": {"mode": "equidistant", "n_sites": 6, "d": 3.0},
  "drive": {"omega0": 1.0, "delta0": 2.3, "t0": 20.0, "c_p": 100.0, "p": 3},
  "analysis": {"gap_grid": 16}
}"#;

#[test]
fn gate_run_writes_result_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", SMALL_CHAIN);
    let o = run_in(dir.path(), &["gate-run", "--config", &cfg, "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&dir.path().join("out/gate.json"));
    let f = v["result"]["gate"]["fidelity"].as_f64().unwrap();
    assert!((0.5..=1.0 + 1e-12).contains(&f), "fidelity {f}");
    assert_eq!(v["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(v["provenance"]["seed"], 0);
    assert!(v["result"]["gate"]["norm_drift"].as_f64().unwrap() < 1e-9);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", SMALL_CHAIN);
    let a = run_in(
        dir.path(),
        &["gate-run", "--config", &cfg, "--out", "a", "--workers", "1"],
    );
    let b = bin()
        .current_dir(dir.path())
        .env("DIPOLARBUS_WORKERS", "3")
        .args(["gate-run", "--config", &cfg, "--out", "b"])
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    let ja = fs::read(dir.path().join("a/gate.json")).unwrap();
    let jb = fs::read(dir.path().join("b/gate.json")).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn missing_key_reports_path_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"version": 1, "geometry": {"mode": "equidistant", "n_sites": 6, "d": 3.0},
            "drive": {"omega0": 1.0, "t0": 20.0, "c_p": 100.0, "p": 3}}"#,
    );
    let o = run_in(dir.path(), &["gate-run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("drive") && err.contains("delta0"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"version": 1, "drive": {"omega0": 1.0, "delta0": 2.3, "t0": 20.0, "c_p": 100.0, "p": 3, "extra": 1}}"#,
    );
    let o = run_in(dir.path(), &["gate-run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("extra"));
}

#[test]
fn non_positive_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        &SMALL_CHAIN.replace("\"omega0\": 1.0", "\"omega0\": -1.0"),
    );
    let o = run_in(dir.path(), &["gate-run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn wrong_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v2.json",
        &SMALL_CHAIN.replace("\"version\": 1", "\"version\": 2"),
    );
    let o = run_in(dir.path(), &["gate-run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("version"));
}

#[test]
fn dry_run_echoes_config_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", SMALL_CHAIN);
    let o = run_in(
        dir.path(),
        &[
            "gate-run",
            "--config",
            &cfg,
            "--out",
            "out",
            "--dry-run",
            "--seed",
            "9",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let echo: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(echo["config"]["seed"], 9);
    assert_eq!(echo["config"]["drive"]["c_p"], 100.0);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["gate-run"]).status.code(), Some(1));
    assert_eq!(
        run_in(dir.path(), &["no-such-command"]).status.code(),
        Some(1)
    );
    let cfg = write_config(dir.path(), "run.json", SMALL_CHAIN);
    let o = run_in(
        dir.path(),
        &["gate-run", "--config", &cfg, "--workers", "0"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_point_sweep_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", SMALL_CHAIN);
    let o = run_in(
        dir.path(),
        &["lz-sweep", "--config", &cfg, "--omega0-grid", "1.0"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("fit requires >= 5 points"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn sweep_deduplicates_grid_and_writes_csv_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        r#"{"version": 1,
            "geometry": {"mode": "equidistant", "n_sites": 4, "d": 3.0},
            "drive": {"omega0": 1.0, "delta0": 2.3, "t0": 10.0, "c_p": 100.0, "p": 3},
            "analysis": {"gap_grid": 16, "sweep": {"omega0_grid": [0.3, 0.4, 0.4, 0.55, 0.7, 0.9]}}}"#,
    );
    let o = run_in(dir.path(), &["lz-sweep", "--config", &cfg, "--out", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# dipolarbus"));
    assert!(lines[1].starts_with("omega0,gap,t0,gap_t0_product,fidelity"));
    assert_eq!(lines.len(), 2 + 5);
    let fit = read_json(&dir.path().join("out/fit.json"));
    assert!(fit["result"]["r_squared"].is_number());
    assert_eq!(
        fit["config"]["analysis"]["sweep"]["omega0_grid"]
            .as_array()
            .unwrap()
            .len(),
        5
    );
}

#[test]
fn equidistant_ensemble_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ens.json",
        r#"{"version": 1, "seed": 5,
            "geometry": {"mode": "equidistant", "n_sites": 5, "d": 3.0},
            "drive": {"omega0": 1.0, "delta0": 2.3, "t0": 20.0, "c_p": 100.0, "p": 3},
            "analysis": {"gap_grid": 16, "ensemble": {"realizations": 2, "pipeline": "gap_and_eint"}}}"#,
    );
    let o = run_in(
        dir.path(),
        &[
            "ensemble",
            "--config",
            &cfg,
            "--out",
            "out",
            "--realizations",
            "3",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&dir.path().join("out/ensemble.json"));
    assert_eq!(v["result"]["total"], 3);
    assert_eq!(v["result"]["aggregates"]["gap"]["std"], 0.0);
    let csv = fs::read_to_string(dir.path().join("out/realizations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("0,5,ok,"));
}

#[test]
fn error_curve_needs_budget_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ec.json",
        r#"{"version": 1, "analysis": {"error_curve": {"gamma0_grid": [1e-4]}}}"#,
    );
    let o = run_in(dir.path(), &["error-curve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budget"));
}

#[test]
fn error_curve_from_explicit_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ec.json",
        r#"{"version": 1, "analysis": {"error_curve": {"budget": {
              "b": 0.62, "c": 0.32, "gap": 0.05, "e_int": 0.2, "span_l": 37.0, "l0": 6.0,
              "delta_exp": 3.0, "c_p": 100.0, "p": 3}}}}"#,
    );
    let o = run_in(
        dir.path(),
        &[
            "error-curve",
            "--config",
            &cfg,
            "--out",
            "out",
            "--gamma0-grid",
            "1e-9,1e-4",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/error_curve.csv")).unwrap();
    let header = csv.lines().nth(1).unwrap();
    assert!(header.contains("f_bare") && header.contains("f_protocol_equidistant"));
    let first: Vec<f64> = csv
        .lines()
        .nth(2)
        .unwrap()
        .split(',')
        .filter_map(|s| s.parse().ok())
        .collect();
    assert!(
        first[1] > 0.999,
        "protocol fidelity at gamma0 -> 0: {}",
        first[1]
    );
}

#[test]
fn preset_error_curve_reports_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "error-curve",
            "--preset",
            "nv",
            "--out",
            "out",
            "--gamma0-grid",
            "1e-6,100",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&dir.path().join("out/error_curve.json"));
    assert_eq!(v["result"]["units"], "si");
    let rows = v["result"]["rows"].as_array().unwrap();
    assert!(rows[0]["f_protocol_equidistant"].as_f64().unwrap() > 0.999);
    assert!(rows[0]["f_bare"].as_f64().unwrap() > 0.999);
    let t_g = v["result"]["at_preset_gamma0"]["t_g"].as_f64().unwrap();
    assert!(t_g > 1e-6 && t_g < 1e-2, "t_g = {t_g} s");
}

#[test]
fn preset_conflict_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.json",
        r#"{"version": 1, "units": {"system": "preset", "name": "rydberg"}}"#,
    );
    let o = run_in(
        dir.path(),
        &["error-curve", "--preset", "nv", "--config", &cfg],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn preset_overrides_are_visible_in_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.json",
        r#"{"version": 1, "units": {"system": "preset", "name": "nv", "overrides": {"gamma0": 50.0}}}"#,
    );
    let o = run_in(
        dir.path(),
        &[
            "error-curve",
            "--config",
            &cfg,
            "--out",
            "out",
            "--gamma0-grid",
            "50",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&dir.path().join("out/error_curve.json"));
    assert_eq!(v["result"]["preset"]["preset"]["gamma0"], 50.0);
    assert!(v["result"]["preset"]["preset"]["c_p"].as_f64().unwrap() > 0.0);
}

#[test]
fn oracle_spacing_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "o.json",
        r#"{"version": 1, "analysis": {"oracle": {
              "spacing": {"p": 3, "c_p": 100.0, "delta": 2.3},
              "scaling": {"spans": [40.0, 80.0], "spacing": 6.0, "d": 1.0, "c_p": 100.0, "p": 3}}}}"#,
    );
    let o = run_in(
        dir.path(),
        &["oracle", "spacing", "--config", &cfg, "--out", "out"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a_r = read_json(&dir.path().join("out/oracle_spacing.json"))["result"]["a_r"]
        .as_f64()
        .unwrap();
    assert!((a_r - 5.935).abs() < 0.005, "{a_r}");
    let o = run_in(
        dir.path(),
        &["oracle", "scaling", "--config", &cfg, "--out", "out"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/oracle_scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 2);
    let o = run_in(dir.path(), &["oracle", "continuum", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_lattice_uses_config_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "o.json",
        r#"{"version": 1,
            "geometry": {"mode": "equidistant", "n_sites": 12, "d": 3.0},
            "drive": {"omega0": 1.0, "delta0": 2.3, "t0": 20.0, "c_p": 100.0, "p": 3},
            "analysis": {"oracle": {"lattice": {"sector": "dd", "n_max": 12}}}}"#,
    );
    let o = run_in(
        dir.path(),
        &["oracle", "lattice", "--config", &cfg, "--out", "out"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&dir.path().join("out/oracle_lattice.json"));
    assert!(
        v["result"]["ground_state"]["n_excitations"]
            .as_u64()
            .unwrap()
            >= 2
    );
}
