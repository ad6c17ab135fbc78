use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn qsmfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsmfg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn base_config(out: &Path) -> Value {
    json!({
        "model": { "name": "example1", "params": { "dim": 1, "epsilon": 0.1, "kappa": 0.2, "potential": 0.5 } },
        "grid": { "dim": 1, "n": 32 },
        "time": { "t_final": 0.2, "dt": 0.02 },
        "mode": "discounted",
        "rho": 1.0,
        "m0": { "kind": "von_mises", "center": [0.3, 0.0], "concentration": 2.0 },
        "output_dir": out,
    })
}

fn read_summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn decoupled_run_converges_quickly_and_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg["model"]["params"]["kappa"] = json!(0.0);
    cfg["model"]["params"]["epsilon"] = json!(0.0);
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let o = qsmfg(&["run", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_summary(&out);
    assert_eq!(s["converged"], json!(true));
    let iters = s["outer_iterations"].as_u64().unwrap();
    assert!((1..=2).contains(&iters), "iterations {iters}");
    assert!(s["max_mass_error"].as_f64().unwrap() < 1e-12);
    for f in ["config.json", "convergence.csv", "trajectory.csv", "densities.bin", "summary.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    // One row per node and time slice: 11 slices of 32 nodes plus the header.
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 11 * 32 + 1);
}

#[test]
fn nonpositive_rho_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    for rho in [json!(0.0), json!(-1.0), Value::Null] {
        let mut cfg = base_config(tmp.path());
        cfg["rho"] = rho;
        let path = write_json(tmp.path(), "cfg.json", &cfg);
        let o = qsmfg(&["run", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("rho"), "{}", stderr(&o));
    }
}

#[test]
fn ergodic_mode_rejects_rho() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config(tmp.path());
    cfg["mode"] = json!("ergodic");
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let o = qsmfg(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rho"));
}

#[test]
fn memory_model_requires_psi() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config(tmp.path());
    cfg["model"] = json!({
        "name": "example2",
        "params": { "dim": 1, "epsilon": 0.1, "kernel": { "kind": "constant", "value": 0.5 } }
    });
    cfg["strategy"] = json!("gamma");
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let o = qsmfg(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strategy"));

    cfg["strategy"] = json!("psi");
    cfg["output_dir"] = json!(tmp.path().join("psi"));
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let o = qsmfg(&["run", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_fields_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let mut top = base_config(tmp.path());
    top["tolerence"] = json!(1e-6);
    let mut nested = base_config(tmp.path());
    nested["model"]["params"]["epsilom"] = json!(0.1);
    let mut memory = base_config(tmp.path());
    memory["model"] = json!({
        "name": "example2",
        "params": { "dim": 1, "kernel": { "kind": "zero" }, "bogus": 1 }
    });
    memory["strategy"] = json!("psi");
    for (i, cfg) in [top, nested, memory].iter().enumerate() {
        let path = write_json(tmp.path(), &format!("cfg{i}.json"), cfg);
        let o = qsmfg(&["run", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", stderr(&o));
        assert!(stderr(&o).contains("unknown field"), "case {i}: {}", stderr(&o));
    }
}

#[test]
fn grid_dimension_must_match_model() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config(tmp.path());
    cfg["grid"]["dim"] = json!(2);
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let o = qsmfg(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.dim"));
}

#[test]
fn missing_file_is_a_runtime_error() {
    let o = qsmfg(&["run", "/nonexistent/qsmfg.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let tmp = TempDir::new().unwrap();
    let mut summaries = Vec::new();
    let mut trajectories = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let path = write_json(tmp.path(), &format!("cfg{k}.json"), &base_config(&out));
        let o = qsmfg(&["run", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut s = read_summary(&out);
        s.as_object_mut().unwrap().remove("seconds");
        summaries.push(s);
        trajectories.push(fs::read(out.join("densities.bin")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
    assert_eq!(trajectories[0], trajectories[1]);
}

#[test]
fn out_flag_overrides_output_dir() {
    let tmp = TempDir::new().unwrap();
    let cfg = base_config(&tmp.path().join("ignored"));
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let out = tmp.path().join("chosen");
    let o = qsmfg(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("summary.json").exists());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn nonconvergence_exits_3_and_keeps_logs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg["tolerances"] = json!({ "max_outer": 1, "outer_tol": 1e-14, "polish_rounds": 0 });
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let o = qsmfg(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(read_summary(&out)["converged"], json!(false));
    assert!(out.join("convergence.csv").exists());
}

#[test]
fn ergodic_run_writes_levels() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = base_config(&out);
    cfg["mode"] = json!("ergodic");
    cfg["rho"] = Value::Null;
    cfg["ergodic"] = json!({ "rho0": 1.0, "max_levels": 4, "min_levels": 4, "tol": 1e-4 });
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let o = qsmfg(&["run", path.to_str().unwrap()]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(3), "{}", stderr(&o));
    let levels = fs::read_to_string(out.join("levels.csv")).unwrap();
    assert_eq!(levels.lines().count(), 5);
    let s = read_summary(&out);
    assert_eq!(s["ergodic"]["levels"].as_array().unwrap().len(), 4);
    assert_eq!(s["rho"], Value::Null);
}

#[test]
fn validate_prints_a_report() {
    let tmp = TempDir::new().unwrap();
    let path = write_json(tmp.path(), "cfg.json", &base_config(tmp.path()));
    let o = qsmfg(&["validate", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report.is_object());
}

#[test]
fn sweep_writes_one_row_per_point() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sweep");
    let sweep = json!({
        "base": base_config(tmp.path()),
        "axes": [
            { "path": "model.params.epsilon", "values": [0.0, 0.1] },
            { "path": "grid.n", "values": [16, 32, 64] },
        ],
        "output_dir": out,
    });
    let path = write_json(tmp.path(), "sweep.json", &sweep);
    let o = qsmfg(&["sweep", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("point,model.params.epsilon,grid.n,converged"));
    assert!(lines[1].starts_with("0,0.0,16,true"));
    assert!(lines[6].starts_with("5,0.1,64,true"));
    for k in 0..6 {
        let s = read_summary(&out.join(format!("point_{k}")));
        assert_eq!(s["converged"], json!(true));
    }
}

#[test]
fn sweep_with_bad_path_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let sweep = json!({
        "base": base_config(tmp.path()),
        "axes": [{ "path": "model.nope.epsilon", "values": [0.1] }],
        "output_dir": tmp.path().join("sweep"),
    });
    let path = write_json(tmp.path(), "sweep.json", &sweep);
    let o = qsmfg(&["sweep", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("sweep").exists());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["example1.json", "example2.json", "ergodic.json"] {
        let o = qsmfg(&["validate", root.join(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn shipped_example1_runs() {
    let tmp = TempDir::new().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = tmp.path().join("out");
    let o = qsmfg(&[
        "run",
        root.join("example1.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_summary(&out);
    assert_eq!(s["converged"], json!(true));
    assert!(s["max_hjb_residual"].as_f64().unwrap() < 1e-8);
    assert!(s["kset"].is_object());
}
