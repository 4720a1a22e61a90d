//! End-to-end tests of the mixray binary: exit codes, file outputs, and
//! byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mixray")
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn base_config() -> serde_json::Value {
    serde_json::json!({
        "metric": {"kind": "euclidean"},
        "field": {"name": "y_dx"},
        "transform": {"kind": "geodesic"},
        "rays": {"n_beta": 24, "n_alpha": 24, "h": 0.002},
        "grid": {"n": 17},
        "seed": 11
    })
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

#[test]
fn sinogram_csv_shape_and_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["rays"] = serde_json::json!({"n_beta": 96, "n_alpha": 96, "h": 0.001});
    let path = write_config(dir.path(), "cfg.json", cfg);
    let out = run(&[
        "sinogram",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sinogram.csv")).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("beta"))
        .collect();
    assert_eq!(rows.len(), 96 * 96);

    // value at the grid ray nearest the height-0.5 chord (β = 5π/6,
    // α = π/6) is the analytic 0.8660
    let (target_b, target_a) = (5.0 * std::f64::consts::PI / 6.0, std::f64::consts::PI / 6.0);
    let mut best = (f64::INFINITY, 0.0);
    for row in &rows {
        let cols: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        let d = (cols[0] - target_b).abs() + (cols[1] - target_a).abs();
        if d < best.0 {
            best = (d, cols[3]);
        }
    }
    // grid-nearest tolerance: the nearest ray sits within one grid step
    assert!(
        (best.1 - 0.8660254037844386).abs() < 4e-2,
        "nearest-ray value {}",
        best.1
    );
    assert!(dir.path().join("sinogram.svg").exists());
}

#[test]
fn zero_field_gives_zero_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["field"] = serde_json::json!({"name": "zero", "params": {"rank": 1.0}});
    let path = write_config(dir.path(), "cfg.json", cfg);
    let out = run(&[
        "sinogram",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sinogram.csv")).unwrap();
    for line in csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("beta")) {
        let v: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn transverse_curl_is_numerically_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["field"] = serde_json::json!({"name": "curl_bump"});
    cfg["transform"] = serde_json::json!({"kind": "transverse"});
    cfg["rays"] = serde_json::json!({"n_beta": 16, "n_alpha": 16, "h": 0.001});
    let path = write_config(dir.path(), "cfg.json", cfg);
    let out = run(&[
        "sinogram",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sinogram.csv")).unwrap();
    let max = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("beta"))
        .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap().abs())
        .fold(0.0f64, f64::max);
    assert!(max <= 1e-6, "max transverse value {max}");
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["unknown_key"] = serde_json::json!(true);
    let path = write_config(dir.path(), "bad.json", cfg);
    let out = run(&["sinogram", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // missing config flag
    let out = run(&["sinogram"]);
    assert_eq!(out.status.code(), Some(2));

    // missing file
    let out = run(&["verify", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));

    // semantic error: curvature metric without kappa
    let mut cfg = base_config();
    cfg["metric"] = serde_json::json!({"kind": "constant_curvature"});
    let path = write_config(dir.path(), "bad2.json", cfg);
    let out = run(&["verify", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn near_singular_mixing_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["transform"] = serde_json::json!({"kind": "mixing", "mixing": ["near_singular"]});
    let path = write_config(dir.path(), "cfg.json", cfg);
    let out = run(&[
        "verify",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_passes_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", base_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = run(&[
            "verify",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let ra = std::fs::read(a.join("verify_report.json")).unwrap();
    let rb = std::fs::read(b.join("verify_report.json")).unwrap();
    assert_eq!(ra, rb);

    // seed override changes the report deterministically
    let c = dir.path().join("c");
    let out = run(&[
        "verify",
        "--config",
        path.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(out.status.success());
    let rc = std::fs::read_to_string(c.join("verify_report.json")).unwrap();
    assert!(rc.contains("\"seed\": 99"));
}

#[test]
fn reduce_demo_residual() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", base_config());
    let out = run(&[
        "reduce",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("reduce_report.json")).unwrap())
            .unwrap();
    assert!(report["normal_identity_residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn reconstruct_and_decompose_demos() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["field"] = serde_json::json!({"name": "potential_grad"});
    cfg["transform"] = serde_json::json!({"kind": "combined"});
    cfg["rays"] = serde_json::json!({"n_beta": 48, "n_alpha": 48, "h": 0.002});
    cfg["grid"] = serde_json::json!({"n": 33, "maxiter": 30000});
    let path = write_config(dir.path(), "cfg.json", cfg);
    let out = run(&[
        "reconstruct",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("reconstruction_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["relative_error"].as_f64().unwrap() < 0.10);
    assert!(dir.path().join("reconstruction.csv").exists());

    let out = run(&[
        "decompose",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("decompose_report.json")).unwrap(),
    )
    .unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    assert!(dir.path().join("solenoidal.csv").exists());
    assert!(dir.path().join("potential.csv").exists());
}

#[test]
fn threads_flag_and_env_respected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", base_config());
    let out = run(&[
        "sinogram",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(out.status.success());
    let out = Command::new(bin())
        .args([
            "sinogram",
            "--config",
            path.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("MIXRAY_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}
