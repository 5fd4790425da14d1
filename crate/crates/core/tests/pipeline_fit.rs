//! Benchmark runs on small and static scenes.

use fourd::pipeline::{run_benchmark, PipelineConfig, SceneConfig};

#[test]
fn report_schema_with_ablation() {
    let mut cfg = PipelineConfig::default();
    cfg.scene = SceneConfig {
        width: 32,
        height: 32,
        frames: 2,
        primitives: 60,
        ..Default::default()
    };
    cfg.optimize.iters = 30;
    cfg.optimize.p_fmd = 0.5;
    cfg.prior.scenes = 2;
    cfg.prior.samples_per_scene = 2;
    cfg.prior.steps = 5;
    cfg.ablate_fmd = true;
    let dir = tempfile::tempdir().unwrap();
    let out = run_benchmark(3, &cfg, Some(dir.path())).unwrap();
    let labels: Vec<&str> = out.report.runs.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["no_fmd", "fmd"]);
    assert!(out.report.run(true).unwrap().fmd_steps > 0);
    assert_eq!(out.report.run(false).unwrap().fmd_steps, 0);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("view_id,psnr_db,ssim,wall_seconds"));
    let rows: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    for label in labels {
        for k in 0..cfg.heldout.len() {
            assert!(rows.contains(&format!("{label}/heldout_{k}").as_str()));
        }
        assert!(rows.contains(&format!("{label}/mean_heldout").as_str()));
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 3);
    for run in &out.report.runs {
        for m in run.heldout.iter().chain(&run.train) {
            assert!((-1.0..=1.0).contains(&m.ssim));
            assert!(m.psnr_db > 0.0);
        }
    }
    assert!(dir.path().join("frames/fmd/heldout_0/frame_0000.png").exists());
}

#[test]
fn static_scene_interpolated_views_reach_30db() {
    let mut cfg = PipelineConfig::default();
    cfg.scene.translation = 0.0;
    cfg.scene.rotation_deg = 0.0;
    cfg.scene.frames = 2;
    cfg.use_fmd = false;
    let out = run_benchmark(7, &cfg, None).unwrap();
    let run = out.report.run(false).unwrap();
    assert!(run.mean_heldout_psnr >= 30.0, "held-out PSNR {:.2} dB", run.mean_heldout_psnr);
}
