//! End-to-end runs of the `bayeseg` binary.

use std::path::Path;
use std::process::{Command, Output};

use bayeseg::config::parse_config;
use bayeseg::io::read_image;
use serde_json::Value;

fn bayeseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayeseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn metrics(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn synth(dir: &Path) {
    let out = bayeseg(&["--seed", "3", "--out-dir", dir.to_str().unwrap(), "synthesize", "standard"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synthesize_writes_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    assert_eq!(
        listing(dir.path()),
        ["gt_basis.bsg", "gt_contour.bsg", "gt_label.png", "y.bsg", "y.png", "y.png.scale.txt"]
    );
    let y = read_image(&dir.path().join("y.bsg")).unwrap();
    assert_eq!((y.width(), y.height()), (32, 32));
}

#[test]
fn unsupervised_segment_reports_zero_cross_entropy() {
    let scene = tempfile::tempdir().unwrap();
    synth(scene.path());
    let out_dir = tempfile::tempdir().unwrap();
    let y = scene.path().join("y.bsg");
    let out = bayeseg(&[
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "--set",
        "max_sweeps=5",
        "segment",
        y.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        listing(out_dir.path()),
        [
            "basis_mean.bsg",
            "config.txt",
            "contour_mean.bsg",
            "contour_var.bsg",
            "label_map.png",
            "metrics.json",
            "omega_mean_0.bsg",
            "omega_mean_1.bsg",
            "rho_mean.bsg",
            "upsilon_mean.bsg",
        ]
    );
    let m = metrics(out_dir.path());
    assert_eq!(m["supervised"], Value::Bool(false));
    assert_eq!(m["final"]["L_ce"].as_f64(), Some(0.0));
    assert_eq!(m["sweeps"].as_u64(), Some(5));
    assert!(m.get("dice").is_none());
}

#[test]
fn supervised_segment_reports_dice_and_keeps_config() {
    let scene = tempfile::tempdir().unwrap();
    synth(scene.path());
    let out_dir = tempfile::tempdir().unwrap();
    let cfg_path = scene.path().join("run.cfg");
    std::fs::write(&cfg_path, "# short run\nmax_sweeps = 8\nlambda = 0\n").unwrap();
    let out = bayeseg(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--lambda",
        "5",
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "segment",
        scene.path().join("y.bsg").to_str().unwrap(),
        "--labels",
        scene.path().join("gt_label.png").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = metrics(out_dir.path());
    assert_eq!(m["supervised"], Value::Bool(true));
    assert!(m["final"]["L_ce"].as_f64().unwrap() > 0.0);
    assert!(m["dice"]["average"].is_number());
    assert_eq!(m["dice"]["per_class"].as_array().unwrap().len(), 2);
    let written = std::fs::read_to_string(out_dir.path().join("config.txt")).unwrap();
    let cfg = parse_config(&written, &[]).unwrap();
    assert_eq!(cfg.hyper.lambda, 5.0);
    assert_eq!(cfg.fit.max_sweeps, 8);
}

#[test]
fn decompose_with_previews() {
    let scene = tempfile::tempdir().unwrap();
    synth(scene.path());
    let out_dir = tempfile::tempdir().unwrap();
    let out = bayeseg(&[
        "--png",
        "--set",
        "max_sweeps=3",
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "decompose",
        scene.path().join("y.png").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = listing(out_dir.path());
    for name in ["basis_mean", "contour_mean", "contour_var", "rho_mean", "upsilon_mean"] {
        for ext in [".bsg", ".png", ".png.scale.txt"] {
            let f = format!("{name}{ext}");
            assert!(files.contains(&f), "missing {f} in {files:?}");
        }
    }
    assert_eq!(metrics(out_dir.path())["command"], "decompose");
}

#[test]
fn evaluate_prints_per_class_and_average() {
    let scene = tempfile::tempdir().unwrap();
    synth(scene.path());
    let gt = scene.path().join("gt_label.png");
    let out = bayeseg(&["evaluate", gt.to_str().unwrap(), gt.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    for line in text.lines() {
        let v: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert_eq!(v, 1.0, "{line}");
    }
}

#[test]
fn errors_use_distinct_exit_codes() {
    assert_eq!(bayeseg(&[]).status.code(), Some(1));
    assert_eq!(bayeseg(&["segment"]).status.code(), Some(1));
    assert_eq!(bayeseg(&["--help"]).status.code(), Some(0));

    let missing = bayeseg(&["decompose", "/nonexistent/image.png"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let bad_key = bayeseg(&["--set", "learning_rte=0.1", "synthesize", "standard"]);
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("learning_rte"));
}

#[test]
fn probe_reports_both_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = bayeseg(&[
        "--set",
        "max_sweeps=5",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "probe",
        "standard",
        "--transform",
        "gamma:0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("lambda=100") && stdout.contains("lambda=0"), "{stdout}");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("probe.json")).unwrap()).unwrap();
    assert!(report["with_prior"]["gap"].is_number(), "{report}");
    assert!(report["without_prior"]["gap"].is_number(), "{report}");
}
