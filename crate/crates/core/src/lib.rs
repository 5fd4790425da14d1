//! Toolkit for single-view-video-to-4D reconstruction experiments.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! - [`geometry`]: pinhole cameras, depth back-projection, point-cloud guides
//!   and closed-loop camera trajectories.
//! - [`attention`]: the fused view/time sparse attention mask and kernels.
//! - [`model`]: a micro multi-view denoising transformer with hand-written
//!   reverse-mode gradients.
//! - [`flow`]: rectified-flow interpolation, the flow-matching objective, the
//!   Euler sampler and flow-matching distillation.
//! - [`splat`]: deformable Gaussian splatting, its rasterizer and optimizer.
//! - [`pipeline`]: synthetic ground-truth scenes, metrics and the benchmark.

pub mod attention;
pub mod container;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod imaging;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod real;
pub mod splat;

pub use error::{Error, Result};
pub use real::Real;
