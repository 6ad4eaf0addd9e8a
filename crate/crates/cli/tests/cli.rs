//! End-to-end checks of the `homlab` binary: verbs, overrides, exit codes.

use std::path::PathBuf;
use std::process::Command;

fn write_config(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("homlab-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn homlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_homlab"))
        .args(args)
        .output()
        .unwrap()
}

const GOOD_CONFIG: &str = r#"{
    "coeff": {"preset": "scalar1d", "params": [2.0, 1.0], "m": 1, "d": 1, "n": 64},
    "eps": [0.125, 0.0625, 0.03125],
    "phi": "steklov"
}"#;

#[test]
fn validate_accepts_good_config() {
    let cfg = write_config("good.json", GOOD_CONFIG);
    let out = homlab(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"ok\": true"), "{text}");
}

#[test]
fn cell_prints_homogenized_tensors() {
    let cfg = write_config("cell.json", GOOD_CONFIG);
    let out = homlab(&["cell", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let a_hat = json["a"][0].as_f64().unwrap();
    assert!((a_hat - 3f64.sqrt()).abs() < 1e-6, "a_hat = {a_hat}");
}

#[test]
fn sweep_writes_reports() {
    let cfg = write_config("sweep.json", GOOD_CONFIG);
    let out_dir = std::env::temp_dir().join("homlab-cli-tests/sweep-out");
    let out = homlab(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "csv,json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with(
        "eps,l2_diff,h1_w,l2_w,layer_energy,h1_u_eps,max_grad_u_eps,psi_dev,compat_resid,wall_ms"
    ));
    assert_eq!(csv.lines().count(), 4);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    assert!(json["slopes"]["l2_diff"]["slope"].as_f64().unwrap() > 0.9);
}

#[test]
fn solve_reports_iterations() {
    let cfg = write_config("solve.json", GOOD_CONFIG);
    let out = homlab(&["solve", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("iterations"), "{text}");
}

#[test]
fn bad_config_exits_with_code_1() {
    let cfg = write_config(
        "bad.json",
        r#"{
            "coeff": {"preset": "scalar1d", "params": [2.0, 1.0], "m": 1, "d": 1, "n": 64},
            "eps": [0.0625, 0.125]
        }"#,
    );
    let out = homlab(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_exits_with_code_3() {
    let out = homlab(&["validate", "--config", "/nonexistent/homlab.json"]);
    assert_eq!(out.status.code(), Some(3));
}
