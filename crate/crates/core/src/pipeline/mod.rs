//! End-to-end harness: synthetic ground truth, metrics, configuration,
//! flow-prior training and the fitting benchmark.

mod bench;
mod config;
mod metrics;
mod prior;
mod synth;

pub use bench::{
    build_prior, evaluate, heldout_cameras, initial_scene, run_benchmark, write_outputs, BenchOutput, MetricReport,
    RunMetrics, Timing, ViewMetric, TRAJECTORY_SAMPLES,
};
pub use config::{InitConfig, InitMode, PipelineConfig, PriorConfig, SCHEMA_VERSION};
pub use metrics::{format_db, psnr, sequence_psnr, sequence_ssim};
pub use prior::{prior_dataset, prior_scene_seeds, train_prior, Adam, PriorSample, PriorTraining};
pub use synth::{frame_checksum, quantized, BundleMeta, SceneBundle, SceneConfig, SyntheticScene, N_CAMERAS};
