use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fourd::attention::build_mask;
use fourd::flow::{euler_sample, toy_dataset, train_toy, ToyConfig, ToyDataset};
use fourd::geometry::{interpolate_trajectory, read_cameras, CameraPose};
use fourd::imaging::{export_frames, import_frames, FrameFormat};
use fourd::model::VelocityField;
use fourd::pipeline::{
    build_prior, format_db, initial_scene, psnr, run_benchmark, InitMode, PipelineConfig, SceneBundle,
    SyntheticScene, TRAJECTORY_SAMPLES,
};
use fourd::splat::{optimize, render_scene, FmdPrior, LossWeights, SceneState};
use fourd::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fourd", version, about = "Multi-view 4D reconstruction toolkit")]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Depth,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Ppm,
    Png,
}

impl From<FormatArg> for FrameFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ppm => FrameFormat::Ppm,
            FormatArg::Png => FrameFormat::Png,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-view scene bundle.
    SynthScene {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the view/time attention mask and report its density.
    BuildMask {
        #[arg(long)]
        views: usize,
        #[arg(long)]
        frames: usize,
        /// Also write the mask as a PBM image.
        #[arg(long)]
        pbm: Option<PathBuf>,
    },
    /// Train a toy 2-D flow, or the scene prior with `--dataset scenes`.
    TrainFlow {
        #[arg(long, default_value = "mixture")]
        dataset: String,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a 4D Gaussian scene to a bundle.
    #[command(name = "fit-4dgs")]
    Fit4dgs {
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long, value_enum, default_value = "depth")]
        init: InitArg,
        #[arg(long)]
        iters: Option<usize>,
        /// Loss weights as JSON, e.g. '{"arap": 0.0}'.
        #[arg(long)]
        weights: Option<String>,
        /// Flow prior checkpoint; enables distillation.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a fitted scene along a camera path.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Camera file; with `--samples` the cameras are looped through.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        /// Comma-separated 1-based timestamps, or `all`.
        #[arg(long, default_value = "all")]
        timestamps: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "png")]
        format: FormatArg,
    },
    /// PSNR and SSIM between two frame directories.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Full benchmark: synthesize, fit, evaluate, write reports.
    Bench {
        #[arg(long)]
        out: PathBuf,
    },
}

fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

// A closed pipe downstream is not an error worth reporting.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &serde_json::Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json value") + "\n"));
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn parse_timestamps(spec: &str, f: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((1..=f).collect());
    }
    spec.split(',')
        .map(|s| {
            let t: usize = s.trim().parse().map_err(|_| input(format!("bad timestamp '{s}'")))?;
            if t == 0 || t > f {
                return Err(input(format!("timestamp {t} outside 1..={f}")));
            }
            Ok(t)
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::SynthScene { out } => {
            let scene = SyntheticScene::new(cfg.scene, seed)?;
            let bundle = scene.bundle(seed, &cfg.hash())?;
            bundle.save(&out)?;
            print_json(&json!({ "out": out, "views": bundle.cams.len(), "frames": bundle.n_frames(),
                "checksums": bundle.meta.checksums }));
        }
        Command::BuildMask { views, frames, pbm } => {
            let mask = build_mask(views, frames)?;
            let report = mask.report();
            if let Some(p) = pbm {
                write_text(&p, &mask.to_pbm())?;
            }
            print_json(&serde_json::to_value(report).expect("report"));
        }
        Command::TrainFlow {
            dataset,
            epochs,
            samples,
            out,
        } => {
            if dataset == "scenes" {
                let (model, loss) = build_prior(&cfg, seed)?;
                model.save(&out)?;
                print_json(&json!({ "out": out, "params": model.n_params(), "final_loss": loss }));
            } else {
                let kind: ToyDataset = dataset.parse()?;
                let data = toy_dataset(kind, 10_000, seed);
                let trained = train_toy(&data, epochs, seed, &ToyConfig::default())?;
                let flat = euler_sample(&trained.model, 2 * samples, 50, seed ^ 1)?;
                let mut csv = String::from("x,y\n");
                for p in flat.chunks(2) {
                    csv.push_str(&format!("{:.6},{:.6}\n", p[0], p[1]));
                }
                write_text(&out, &csv)?;
                let tail = trained.losses.len().min(100);
                let last = trained.losses[trained.losses.len() - tail..].iter().sum::<f64>() / tail.max(1) as f64;
                print_json(&json!({ "out": out, "steps": trained.losses.len(), "final_loss": last }));
            }
        }
        Command::Fit4dgs {
            scene_dir,
            init,
            iters,
            weights,
            model,
            out,
        } => {
            let bundle = SceneBundle::load(&scene_dir)?;
            let mut cfg = cfg;
            cfg.init.mode = match init {
                InitArg::Depth => InitMode::Depth,
                InitArg::Random => InitMode::Random,
            };
            if let Some(n) = iters {
                cfg.optimize.iters = n;
            }
            if let Some(w) = weights {
                let merged = {
                    let mut base = serde_json::to_value(cfg.optimize.weights).expect("weights");
                    let patch: serde_json::Value =
                        serde_json::from_str(&w).map_err(|e| input(format!("--weights: {e}")))?;
                    let obj = patch.as_object().ok_or_else(|| input("--weights must be a JSON object"))?;
                    for (k, v) in obj {
                        base[k] = v.clone();
                    }
                    base
                };
                cfg.optimize.weights =
                    serde_json::from_value::<LossWeights>(merged).map_err(|e| input(format!("--weights: {e}")))?;
                cfg.optimize.weights.validate()?;
            }
            let mut scene = initial_scene(&bundle, &cfg, seed)?;
            let prior_model = model.as_deref().map(VelocityField::<f64>::load).transpose()?;
            let trajectory = interpolate_trajectory(&bundle.cams, TRAJECTORY_SAMPLES)?;
            let prior = prior_model.as_ref().map(|m| FmdPrior {
                model: m,
                trajectory: &trajectory,
            });
            let report = optimize(&mut scene, &bundle.training_data(), prior.as_ref(), &cfg.optimize, seed)?;
            scene.save(&out)?;
            print_json(&json!({ "out": out, "gaussians": scene.len(), "iters": report.losses.len(),
                "fmd_steps": report.fmd_steps, "final_loss": report.losses.last() }));
        }
        Command::Render {
            scene,
            trajectory,
            samples,
            timestamps,
            out_dir,
            format,
        } => {
            let state = SceneState::load(&scene)?;
            let cams = read_cameras(&trajectory)?;
            let poses: Vec<CameraPose> = match samples {
                Some(n) => interpolate_trajectory(&cams, n)?.poses,
                None => cams,
            };
            let ts = parse_timestamps(&timestamps, state.n_frames())?;
            let mut frames = Vec::with_capacity(poses.len() * ts.len());
            for cam in &poses {
                for &t in &ts {
                    frames.push(render_scene(&state, cam, t, &cfg.optimize.raster)?.image());
                }
            }
            let written = export_frames(&frames, &out_dir, format.into())?;
            print_json(&json!({ "out_dir": out_dir, "frames": written.len() }));
        }
        Command::Metrics { pred, gt } => {
            let a = import_frames(&pred)?;
            let b = import_frames(&gt)?;
            if a.len() != b.len() || a.is_empty() {
                return Err(input(format!("{} predicted frames vs {} ground-truth frames", a.len(), b.len())));
            }
            let mut rows = Vec::with_capacity(a.len());
            let (mut sp, mut ss) = (0.0, 0.0);
            for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                let p = psnr(x, y)?;
                let s = fourd::splat::ssim(x, y)?;
                sp += p;
                ss += s;
                rows.push(json!({ "frame": i, "psnr_db": format_db(p), "ssim": s }));
            }
            let n = a.len() as f64;
            print_json(&json!({ "frames": rows, "mean_psnr_db": format_db(sp / n), "mean_ssim": ss / n }));
        }
        Command::Bench { out } => {
            let output = run_benchmark(seed, &cfg, Some(&out))?;
            emit(&output.report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "stage": null, "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "stage": e.stage(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
