use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn kernelforge(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kernelforge"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("KF_THREADS", t);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn dephasing(out: &Path, t_total: f64) -> Value {
    json!({
        "model": {"kind": "pure_dephasing", "params": {"eps": 1.0,
            "bath": {"family": "drude_lorentz_ht", "lambda": 0.5, "omega_c": 50.0, "beta": 0.2}}},
        "task": "ttm",
        "preparation": {"kind": "rotation", "theta": std::f64::consts::PI / 8.0},
        "numerics": {"dt": 0.01, "tau_sample": 1.0, "t_total": t_total},
        "output_dir": out,
    })
}

fn uncoupled_dimer(out: &Path, tau: f64) -> Value {
    json!({
        "model": {"kind": "chromophoric", "params": {"site_energies": [1.0, 1.0], "couplings": [[0, 1, 0.0]],
            "bath": {"family": "ohmic_exp", "lambda": 0.1, "omega_c": 2.0, "beta": 1.0}}},
        "task": "spectrum",
        "numerics": {"dt": 0.1, "tau_sample": tau, "t_total": 20.0, "depth": 3},
        "output_dir": out,
    })
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = match std::fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().into_string().unwrap()).collect(),
        Err(_) => Vec::new(),
    };
    v.sort();
    v
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, "{ \"task\": ").unwrap();
    let out = kernelforge(&["run", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["code"], 2);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(files_in(tmp.path()), vec!["bad.json".to_string()]);

    let mut cfg = dephasing(&tmp.path().join("a"), 2.0);
    cfg["numerics"]["typo"] = json!(1);
    let out = kernelforge(&["run", &write_config(tmp.path(), "typo.json", &cfg)], None);
    assert_eq!(out.status.code(), Some(2));

    let mut cfg = dephasing(&tmp.path().join("b"), 2.0);
    cfg["numerics"]["tau_sample"] = json!(5.0);
    let out = kernelforge(&["run", &write_config(tmp.path(), "tau.json", &cfg)], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(files_in(&tmp.path().join("b")).is_empty());
}

#[test]
fn ttm_run_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "cfg.json", &dephasing(&dir, 3.0));
    let out = kernelforge(&["run", &cfg], Some("1"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files_in(&dir), vec!["manifest.json", "trajectory.csv", "ttm_norms.csv"]);

    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["threads"], 1);
    assert_eq!(manifest["gate"]["ttm"]["passed"], true);
    assert!(manifest["residuals"]["max_trace_distance_to_hierarchy"].as_f64().unwrap() < 1e-4);
    // Every numerical knob is recorded, defaults included.
    let numerics = manifest["config"]["numerics"].as_object().unwrap();
    for key in [
        "dt", "tau_sample", "t_total", "depth", "substeps", "n_exp_terms", "scaled", "window", "thermometry_window",
        "pad_factor", "floor", "thresholds", "enforce_gate", "truncate_emission", "reference", "relax",
    ] {
        assert!(numerics.contains_key(key), "{key}");
    }
    assert!(manifest["config"]["oracle"].is_object());
    assert!(manifest["model"]["h_sys"].is_array());

    let traj = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 301);
    let norms = std::fs::read_to_string(dir.join("ttm_norms.csv")).unwrap();
    assert_eq!(norms.lines().next(), Some("k,t,norm_T,norm_I"));

    // Identical config, identical bytes.
    let first: Vec<Vec<u8>> = files_in(&dir).iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
    assert!(kernelforge(&["run", &cfg], Some("1")).status.success());
    let second: Vec<Vec<u8>> = files_in(&dir).iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn overrides_take_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &dephasing(&tmp.path().join("ignored"), 3.0));
    let dir = tmp.path().join("override");
    let out = kernelforge(&["verify", &cfg, "--output-dir", dir.to_str().unwrap(), "--t-total", "2"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["config"]["numerics"]["t_total"], 2.0);
    assert_eq!(manifest["command"], "verify");
    assert_eq!(files_in(&dir), vec!["manifest.json", "ttm_norms.csv"]);
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn short_sample_fails_verification_with_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "cfg.json", &uncoupled_dimer(&dir, 0.5));
    let out = kernelforge(&["verify", &cfg], None);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "decay_gate");
    assert!(err["error"]["ratio"].as_f64().unwrap() > err["error"]["threshold"].as_f64().unwrap());
    // The report is still written by verify.
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["gate"]["emission"]["passed"], false);

    // A run with the same sample refuses to extend and writes nothing.
    let run_dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "run.json", &uncoupled_dimer(&run_dir, 0.5));
    let out = kernelforge(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(files_in(&run_dir).is_empty());
}

#[test]
fn spectrum_task_writes_both_spectra() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "cfg.json", &uncoupled_dimer(&dir, 3.0));
    let out = kernelforge(&["run", &cfg], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files_in(&dir), vec!["manifest.json", "spectrum_abs.csv", "spectrum_emi.csv", "ttm_norms.csv"]);
    let abs = std::fs::read_to_string(dir.join("spectrum_abs.csv")).unwrap();
    assert_eq!(abs.lines().next(), Some("omega,value"));
    assert_eq!(abs.lines().count(), 1 + 2 * 201);
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["config"]["numerics"]["window"]["rate"], 0.02);
}

#[test]
fn thermometry_task_reports_beta() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let mut cfg = uncoupled_dimer(&dir, 3.0);
    cfg["task"] = json!("thermometry");
    cfg["numerics"]["t_total"] = json!(60.0);
    let out = kernelforge(&["run", &write_config(tmp.path(), "cfg.json", &cfg)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = read_json(&dir.join("thermometry.json"));
    for key in ["beta", "beta_stderr", "offset", "n_points", "window"] {
        assert!(t.get(key).is_some(), "{key}");
    }
    assert!((t["beta"].as_f64().unwrap() - 1.0).abs() < 0.05, "{t}");
    let manifest = read_json(&dir.join("manifest.json"));
    assert!(manifest["residuals"]["kms_residual_at_fit"].as_f64().unwrap() < 0.05);
}

#[test]
fn oracle_subcommand_compares_initial_states() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let cfg = json!({
        "model": {"kind": "spin_boson", "params": {"eps": 1.0, "delta": 1.0,
            "bath": {"family": "ohmic_exp", "lambda": 0.1, "omega_c": 2.0, "beta": 1.0}}},
        "task": "ttm",
        "preparation": {"kind": "measurement"},
        "numerics": {"dt": 0.1, "tau_sample": 1.0, "t_total": 10.0},
        "output_dir": dir,
    });
    let out = kernelforge(&["oracle", &write_config(tmp.path(), "cfg.json", &cfg)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["task"], "oracle_check");
    assert!(manifest["residuals"]["cumulative_trace_distance"].as_f64().unwrap() > 0.0);
    assert_eq!(files_in(&dir), vec!["manifest.json", "trajectory.csv"]);
}

#[test]
fn unstable_integration_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let mut cfg = dephasing(&dir, 2.0);
    cfg["task"] = json!("trajectory");
    cfg["initial"] = json!({"kind": "product", "rho": [[0.5, 0.0], [0.5, 0.0], [0.5, 0.0], [0.5, 0.0]]});
    cfg["numerics"] = json!({"dt": 0.1, "tau_sample": 1.0, "t_total": 2.0, "substeps": 1});
    let out = kernelforge(&["run", &write_config(tmp.path(), "cfg.json", &cfg)], None);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"]["kind"], "instability");
    assert!(files_in(&dir).is_empty());
}
