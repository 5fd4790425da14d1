use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};

use super::config::{InitMode, PipelineConfig, SCHEMA_VERSION};
use super::metrics::{format_db, sequence_psnr, sequence_ssim};
use super::prior::{prior_dataset, train_prior};
use super::synth::{SceneBundle, SyntheticScene};
use crate::error::{Error, Result, StageExt};
use crate::geometry::{interpolate_trajectory, CameraPose};
use crate::imaging::{export_frames, FrameFormat, Image};
use crate::model::VelocityField;
use crate::splat::{
    init_from_depth, init_random, optimize, render_scene, DeformationField, FmdPrior, OptimizeReport, SceneState,
};

/// Samples in the distillation trajectory.
pub const TRAJECTORY_SAMPLES: usize = 120;

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_db(*v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewMetric {
    pub view_id: String,
    #[serde(serialize_with = "ser_db")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub label: String,
    pub fmd: bool,
    pub heldout: Vec<ViewMetric>,
    pub train: Vec<ViewMetric>,
    #[serde(serialize_with = "ser_db")]
    pub mean_heldout_psnr: f64,
    pub mean_heldout_ssim: f64,
    #[serde(serialize_with = "ser_db")]
    pub mean_train_psnr: f64,
    pub mean_train_ssim: f64,
    pub gaussian_counts: Vec<(usize, usize)>,
    pub fmd_steps: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub bundle_checksums: Vec<String>,
    pub prior_final_loss: Option<f64>,
    pub runs: Vec<RunMetrics>,
}

impl MetricReport {
    /// Columns `view_id, psnr_db, ssim, wall_seconds`. Wall time is left
    /// blank so reports stay byte-identical across runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view_id,psnr_db,ssim,wall_seconds\n");
        for run in &self.runs {
            let rows = run.heldout.iter().cloned().chain([
                ViewMetric {
                    view_id: "mean_heldout".into(),
                    psnr_db: run.mean_heldout_psnr,
                    ssim: run.mean_heldout_ssim,
                },
                ViewMetric {
                    view_id: "mean_train".into(),
                    psnr_db: run.mean_train_psnr,
                    ssim: run.mean_train_ssim,
                },
            ]);
            for r in rows {
                out.push_str(&format!("{}/{},{},{:.6},\n", run.label, r.view_id, format_db(r.psnr_db), r.ssim));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn run(&self, fmd: bool) -> Option<&RunMetrics> {
        self.runs.iter().find(|r| r.fmd == fmd)
    }
}

/// Stage wall times, kept out of the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
}

impl Timing {
    fn record(&mut self, name: &str, start: Instant) {
        self.stages.push((name.to_string(), start.elapsed().as_secs_f64()));
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub report: MetricReport,
    pub timing: Timing,
    /// Held-out renders per run, `(run label, view id, frames)`.
    pub frames: Vec<(String, String, Vec<Image>)>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Loop-parameter cameras used for held-out evaluation.
pub fn heldout_cameras(scene: &SyntheticScene, params: &[f64]) -> Result<Vec<CameraPose>> {
    let ring = scene.camera_loop()?;
    Ok(params.iter().map(|&p| ring.pose_at(p)).collect())
}

/// Seeded scene from the bundle's first frames.
pub fn initial_scene(bundle: &SceneBundle, cfg: &PipelineConfig, seed: u64) -> Result<SceneState> {
    let f = bundle.n_frames();
    let deformation = DeformationField::new(cfg.deform, f, seed ^ 0xdef0_4d00)?;
    match cfg.init.mode {
        InitMode::Depth => {
            let frames: Vec<Image> = bundle.frames.iter().map(|v| v[0].clone()).collect();
            let depths: Vec<_> = bundle.depths.iter().map(|v| v[0].clone()).collect();
            init_from_depth(&frames, &depths, &bundle.cams, cfg.init.voxel, deformation)
        }
        InitMode::Random => init_random(cfg.init.random_count, [0.0; 3], cfg.init.random_radius, seed, deformation),
    }
}

/// Render a fitted scene at every timestamp from each camera and score it
/// against the ground truth.
pub fn evaluate(
    fitted: &SceneState,
    truth: &SyntheticScene,
    cams: &[CameraPose],
    prefix: &str,
    raster: &crate::splat::RasterConfig,
) -> Result<(Vec<ViewMetric>, Vec<Vec<Image>>)> {
    let f = truth.config.frames;
    let mut metrics = Vec::with_capacity(cams.len());
    let mut renders = Vec::with_capacity(cams.len());
    for (k, cam) in cams.iter().enumerate() {
        let mut got = Vec::with_capacity(f);
        let mut want = Vec::with_capacity(f);
        for t in 1..=f {
            got.push(render_scene(fitted, cam, t, raster)?.image());
            want.push(truth.render(cam, t)?.image());
        }
        metrics.push(ViewMetric {
            view_id: format!("{prefix}_{k}"),
            psnr_db: sequence_psnr(&got, &want)?,
            ssim: sequence_ssim(&got, &want)?,
        });
        renders.push(got);
    }
    Ok((metrics, renders))
}

fn fit_and_score(
    truth: &SyntheticScene,
    bundle: &SceneBundle,
    cfg: &PipelineConfig,
    prior: Option<&FmdPrior>,
    seed: u64,
    timing: &mut Timing,
) -> Result<(RunMetrics, Vec<(String, Vec<Image>)>)> {
    let label = if prior.is_some() { "fmd" } else { "no_fmd" };
    let start = Instant::now();
    let mut scene = initial_scene(bundle, cfg, seed).stage("init")?;
    let report: OptimizeReport = optimize(&mut scene, &bundle.training_data(), prior, &cfg.optimize, seed).stage("optimize")?;
    timing.record(&format!("fit_{label}"), start);
    let start = Instant::now();
    let held = heldout_cameras(truth, &cfg.heldout).stage("evaluate")?;
    let (heldout, renders) = evaluate(&scene, truth, &held, "heldout", &cfg.optimize.raster).stage("evaluate")?;
    let (train, _) = evaluate(&scene, truth, &bundle.cams, "train", &cfg.optimize.raster).stage("evaluate")?;
    timing.record(&format!("evaluate_{label}"), start);
    let frames = heldout.iter().map(|m| m.view_id.clone()).zip(renders).collect();
    Ok((
        RunMetrics {
            label: label.to_string(),
            fmd: prior.is_some(),
            mean_heldout_psnr: mean(heldout.iter().map(|m| m.psnr_db)),
            mean_heldout_ssim: mean(heldout.iter().map(|m| m.ssim)),
            mean_train_psnr: mean(train.iter().map(|m| m.psnr_db)),
            mean_train_ssim: mean(train.iter().map(|m| m.ssim)),
            heldout,
            train,
            gaussian_counts: report.counts.clone(),
            fmd_steps: report.fmd_steps,
            final_loss: report.losses.last().copied().unwrap_or(0.0),
        },
        frames,
    ))
}

/// Train the distillation prior on scenes other than the benchmark's.
pub fn build_prior(cfg: &PipelineConfig, seed: u64) -> Result<(VelocityField<f64>, f64)> {
    let data = prior_dataset(cfg, seed)?;
    let trained = train_prior(&data, &cfg.prior, seed)?;
    let tail = trained.losses.len().min(100);
    let last = mean(trained.losses[trained.losses.len() - tail..].iter().cloned());
    Ok((trained.model, last))
}

/// Synthesize, fit (with and/or without distillation), evaluate, and
/// optionally write `metrics.csv`, `metrics.json`, `timing.json` and the
/// held-out frames under `out`.
pub fn run_benchmark(seed: u64, cfg: &PipelineConfig, out: Option<&Path>) -> Result<BenchOutput> {
    cfg.validate()?;
    let mut timing = Timing::default();
    let start = Instant::now();
    let truth = SyntheticScene::new(cfg.scene, seed).stage("synth")?;
    let bundle = truth.bundle(seed, &cfg.hash()).stage("synth")?;
    timing.record("synth", start);
    let mut variants = vec![cfg.use_fmd];
    if cfg.ablate_fmd {
        variants.push(!cfg.use_fmd);
        variants.sort();
    }
    let mut prior_model = None;
    let mut prior_final_loss = None;
    if variants.contains(&true) && cfg.optimize.weights.fmd > 0.0 {
        let start = Instant::now();
        let (m, l) = build_prior(cfg, seed).stage("prior")?;
        prior_model = Some(m);
        prior_final_loss = Some(l);
        timing.record("prior", start);
    }
    let trajectory = interpolate_trajectory(&bundle.cams, TRAJECTORY_SAMPLES).stage("prior")?;
    let mut runs = Vec::new();
    let mut frames = Vec::new();
    for use_fmd in variants {
        let prior = match (&prior_model, use_fmd) {
            (Some(model), true) => Some(FmdPrior {
                model,
                trajectory: &trajectory,
            }),
            _ => None,
        };
        let (run, fr) = fit_and_score(&truth, &bundle, cfg, prior.as_ref(), seed, &mut timing)?;
        frames.extend(fr.into_iter().map(|(v, f)| (run.label.clone(), v, f)));
        runs.push(run);
    }
    let report = MetricReport {
        schema_version: SCHEMA_VERSION,
        seed,
        config_hash: cfg.hash(),
        bundle_checksums: bundle.meta.checksums.clone(),
        prior_final_loss,
        runs,
    };
    let output = BenchOutput { report, timing, frames };
    if let Some(dir) = out {
        write_outputs(&output, dir).stage("write")?;
    }
    Ok(output)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_outputs(output: &BenchOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("metrics.csv"), &output.report.to_csv())?;
    write_file(&dir.join("metrics.json"), &output.report.to_json())?;
    let timing = serde_json::to_string_pretty(&output.timing).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&dir.join("timing.json"), &(timing + "\n"))?;
    for (label, view, frames) in &output.frames {
        export_frames(frames, &dir.join("frames").join(label).join(view), FrameFormat::Png)?;
    }
    Ok(())
}
