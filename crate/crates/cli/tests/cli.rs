use std::path::Path;
use std::process::{Command, Output};

fn fourd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fourd")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("{e}: {line}"))
}

const SMALL: &str = r#"{"scene": {"width": 32, "height": 32, "frames": 2, "primitives": 80}}"#;

#[test]
fn build_mask_reports_formula_density() {
    let v = stdout_json(&fourd(&["build-mask", "--views", "4", "--frames", "3"]));
    assert_eq!(v["formula_numerator"], 3);
    assert_eq!(v["formula_denominator"], 8);
    assert_eq!(v["measured_density"], v["formula_density"]);
}

#[test]
fn errors_are_json_on_stderr() {
    let e = stderr_json(&fourd(&["build-mask", "--views", "0", "--frames", "1"]));
    assert_eq!(e["error"], "input");
    let e = stderr_json(&fourd(&["no-such-command"]));
    assert_eq!(e["error"], "usage");
    let e = stderr_json(&fourd(&["metrics", "--pred", "/nonexistent/a", "--gt", "/nonexistent/b"]));
    assert_eq!(e["error"], "io");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"schema_version": 99}"#).unwrap();
    let e = stderr_json(&fourd(&["--config", cfg.to_str().unwrap(), "build-mask", "--views", "1", "--frames", "1"]));
    assert_eq!(e["error"], "input");
}

#[test]
fn help_goes_to_stdout() {
    let out = fourd(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth-scene", "build-mask", "train-flow", "fit-4dgs", "render", "metrics", "bench"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn synth_fit_render_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    std::fs::write(p("cfg.json"), SMALL).unwrap();
    let cfg = p("cfg.json");
    let v = stdout_json(&fourd(&["--config", &cfg, "--seed", "3", "synth-scene", "--out", &p("scene")]));
    assert_eq!(v["views"], 6);
    assert!(Path::new(&p("scene")).join("cameras.json").exists());

    let v = stdout_json(&fourd(&[
        "--config", &cfg, "fit-4dgs", "--scene-dir", &p("scene"), "--iters", "20", "--weights", r#"{"arap": 0.0}"#,
        "--out", &p("fit.bin"),
    ]));
    assert_eq!(v["iters"], 20);

    let cams = p("scene/cameras.json");
    for out in ["r1", "r2"] {
        let v = stdout_json(&fourd(&[
            "render", "--scene", &p("fit.bin"), "--trajectory", &cams, "--samples", "5", "--timestamps", "1,2",
            "--out-dir", &p(out), "--format", "ppm",
        ]));
        assert_eq!(v["frames"], 10);
    }
    let v = stdout_json(&fourd(&["metrics", "--pred", &p("r1"), "--gt", &p("r2")]));
    assert_eq!(v["mean_psnr_db"], "inf");

    let e = stderr_json(&fourd(&[
        "render", "--scene", &p("fit.bin"), "--trajectory", &cams, "--timestamps", "3", "--out-dir", &p("r3"),
    ]));
    assert_eq!(e["error"], "input");
}

#[test]
fn toy_flow_writes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("samples.csv");
    let v = stdout_json(&fourd(&[
        "train-flow", "--dataset", "gauss", "--epochs", "1", "--samples", "50", "--out", out.to_str().unwrap(),
    ]));
    assert!(v["final_loss"].as_f64().unwrap().is_finite());
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 51);
    let e = stderr_json(&fourd(&["train-flow", "--dataset", "spiral", "--out", "/tmp/unused.csv"]));
    assert_eq!(e["error"], "input");
}
