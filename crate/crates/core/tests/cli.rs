use std::path::Path;
use std::process::{Command, Output};

use samgs::trajectory::read_csv;

fn samgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samgs")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_trajectory_and_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    let out = samgs(&["run", "--point", "3", "--max-steps", "5", "--out", path(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let verdict: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(verdict["steps_used"], 5);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,theta_1,theta_2,loss_1,loss_2,loss_mtl,psi,branch,gnorm_1,gnorm_2\n"));
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].theta, vec![6.5, 2.5]);
    assert!(rows[0].psi.is_none() && rows[1].psi.is_some());
}

#[test]
fn run_from_explicit_theta() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    let out = samgs(&["run", "--theta", "-1.5,4", "--max-steps", "3", "--method", "mgda", "--out", path(&csv)]);
    assert_eq!(code(&out), 0);
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows[0].theta, vec![-1.5, 4.0]);
    assert!(rows[1].psi.is_none());
}

#[test]
fn suite_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = samgs(&["suite", "--method", "cagrad", "--max-steps", "20", "--points", "0,2", "--output-dir", path(tmp.path())]);
    assert_eq!(code(&out), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["point_count"], 2);
    assert_eq!(summary["method"], "cagrad");
    assert!(tmp.path().join("point_0.csv").exists());
    assert!(tmp.path().join("point_2.csv").exists());
    assert!(!tmp.path().join("point_1.csv").exists());
}

#[test]
fn exit_code_for_all_diverged() {
    let tmp = tempfile::tempdir().unwrap();
    let out = samgs(&["suite", "--lr", "1e300", "--max-steps", "50", "--output-dir", path(tmp.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exit_code_for_bad_configuration() {
    assert_eq!(code(&samgs(&["run", "--bogus"])), 1);
    assert_eq!(code(&samgs(&["run", "--problem", "nope"])), 1);
    assert_eq!(code(&samgs(&["run", "--gamma", "1.5"])), 1);
    assert_eq!(code(&samgs(&["run", "--point", "9"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "gama = 0.1\n").unwrap();
    assert_eq!(code(&samgs(&["suite", "--config", path(&cfg)])), 1);
}

#[test]
fn check_gradients_exit_codes() {
    let out = samgs(&["check-gradients", "--samples", "50"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["samples"], 50);
    assert_eq!(code(&samgs(&["check-gradients", "--samples", "5", "--tolerance", "1e-30"])), 3);
}

#[test]
fn grid_export_layout() {
    let out = samgs(&["grid-export", "--xmin", "-1", "--xmax", "1", "--ymin", "0", "--ymax", "2", "--resolution", "0.5"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "theta_1,theta_2,loss_1,loss_2,loss_mtl");
    assert_eq!(lines.len(), 1 + 5 * 5);
    assert!(lines[1].starts_with("-1.0,0.0,"));
    for line in &lines[1..] {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[2] + v[3] - v[4]).abs() < 1e-12);
    }
}

#[test]
fn grid_export_weighted() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("g.csv");
    let out = samgs(&[
        "grid-export", "--alpha", "2", "--xmin", "0", "--xmax", "1", "--ymin", "0", "--ymax", "1", "--resolution", "1",
        "--out", path(&file),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(file).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((2.0 * v[2] + v[3] - v[4]).abs() < 1e-12);
    }
    assert_eq!(code(&samgs(&["grid-export", "--resolution", "0"])), 1);
}

#[test]
fn metrics_subcommands() {
    let table = concat!(env!("CARGO_MANIFEST_DIR"), "/data/cityscapes.csv");
    let out = samgs(&["metrics", "delta-m", "--table", table, "--methods", "UW"]);
    assert_eq!(code(&out), 0);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0]["method"], "UW");
    assert!((rows[0]["value"].as_f64().unwrap() - 5.8732).abs() < 1e-3);

    let out = samgs(&["metrics", "mean-rank", "--table", table]);
    assert_eq!(code(&out), 0);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 15);
    let total: f64 = rows.iter().map(|r| r["value"].as_f64().unwrap()).sum();
    assert!((total - 15.0 * 16.0 / 2.0).abs() < 1e-9);

    assert_eq!(code(&samgs(&["metrics", "delta-m", "--table", table, "--methods", "Nope"])), 1);
}

#[test]
fn ablate_and_sweep_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = samgs(&["ablate-gamma", "--gammas", "0,1", "--max-steps", "10", "--output-dir", path(tmp.path())]);
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("ablation.json").exists());
    assert!(tmp.path().join("gamma_0").join("summary.json").exists());
    assert!(tmp.path().join("gamma_1").join("point_5.csv").exists());

    let out = samgs(&[
        "sweep-alpha", "--alphas", "1,2", "--sweep-steps", "10", "--points", "0", "--output-dir", path(tmp.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["max_steps"], 10);
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 2);
    assert_eq!(code(&samgs(&["sweep-alpha", "--alphas", "0"])), 1);
}
