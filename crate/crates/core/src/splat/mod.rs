//! 4D Gaussian splatting: canonical Gaussians with a deformation field,
//! projection, rasterization, losses, densification and fitting.

mod deform;
mod densify;
mod gaussian;
mod init;
mod loss;
mod optimize;
mod project;
mod raster;
mod render;
mod scene;

pub use deform::{deform_gaussians, DeformCache, DeformConfig, DeformGrad, DeformOffset, DeformationField, OFFSET_DIM};
pub use densify::{densify_prune, DensifyConfig, DensifyReport};
pub use gaussian::{logit, normalize_quat, quat_to_matrix, sigmoid, Gaussian4D, GAUSSIAN_PARAMS};
pub use init::{fuse_depths, gaussians_from_points, init_from_depth, init_random, INIT_OPACITY};
pub use loss::{
    arap_loss, arap_loss_with_neighbors, knn, recon_loss, rot_loss_from_offsets, ssim, ssim_with_grad,
};
pub use optimize::{
    camera_extent, guide_conditioning, images_to_latent, latent_to_images, optimize, FmdPrior, LossWeights,
    OptimizeConfig, OptimizeReport, TrainingData,
};
pub use project::{project_gaussian, project_gaussian_backward, Projected, ProjectionGrad, LOW_PASS, NEAR_PLANE};
pub use raster::{rasterize, rasterize_backward, RasterConfig, RasterOutput, Splat, SplatGrad};
pub use render::{render_backward, render_gaussians, render_scene, Rendered, DEPTH_MIN_ALPHA};
pub use scene::{LearningRates, OptimizerState, SceneState, MAX_GAUSSIANS, PRUNE_OPACITY, PRUNE_TRIGGER};
