use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::deform::DeformOffset;
use super::densify::{densify_prune, DensifyConfig, DensifyReport};
use super::gaussian::{Gaussian4D, GAUSSIAN_PARAMS};
use super::loss::{arap_loss_with_neighbors, knn, recon_loss};
use super::raster::RasterConfig;
use super::render::{render_backward, render_gaussians};
use super::scene::{LearningRates, SceneState};
use crate::error::{Error, Result};
use crate::flow::{fmd_loss, ConditionedField, FmdConfig, Reduction};
use crate::geometry::{back_project, render_point_cloud, CameraPose, DepthMap, Trajectory};
use crate::imaging::Image;
use crate::model::{Conditioning, LatentGrid, LatentShape, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub ssim: f64,
    pub fmd: f64,
    pub arap: f64,
    pub rot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 0.2,
            fmd: 0.05,
            arap: 0.01,
            rot: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.ssim, self.fmd, self.arap, self.rot].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::input("loss weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub iters: usize,
    pub weights: LossWeights,
    pub lr: LearningRates,
    /// Probability of a distillation step per iteration.
    pub p_fmd: f64,
    pub fmd: FmdConfig,
    /// Distillation renders are this many times smaller than the training
    /// frames.
    pub fmd_downsample: usize,
    pub densify: DensifyConfig,
    pub densify_from: usize,
    pub densify_every: usize,
    pub densify_until: usize,
    pub arap_neighbors: usize,
    pub raster: RasterConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            weights: LossWeights::default(),
            lr: LearningRates::default(),
            p_fmd: 0.1,
            fmd: FmdConfig {
                reduction: Reduction::Mean,
                ..FmdConfig::default()
            },
            fmd_downsample: 4,
            densify: DensifyConfig::default(),
            densify_from: 500,
            densify_every: 200,
            densify_until: 1500,
            arap_neighbors: 8,
            raster: RasterConfig::default(),
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.fmd.validate()?;
        if !(0.0..=1.0).contains(&self.p_fmd) {
            return Err(Error::input("distillation probability must lie in [0, 1]"));
        }
        if self.fmd_downsample == 0 || self.densify_every == 0 || self.arap_neighbors == 0 {
            return Err(Error::input("downsample, densify interval and neighbour count must be positive"));
        }
        Ok(())
    }
}

/// Multi-view training video: `frames[v][t]` and `depths[v][t]` with 0-based
/// `t`, seen from `cams[v]`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub frames: &'a [Vec<Image>],
    pub depths: &'a [Vec<DepthMap>],
    pub cams: &'a [CameraPose],
}

impl TrainingData<'_> {
    pub fn n_views(&self) -> usize {
        self.cams.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let f = self.n_frames();
        if self.cams.is_empty() || f == 0 {
            return Err(Error::input("training data needs at least one view and frame"));
        }
        if self.frames.len() != self.cams.len() || self.frames.iter().any(|v| v.len() != f) {
            return Err(Error::input("every view needs the same number of frames"));
        }
        if self.depths.len() != self.cams.len() || self.depths.iter().any(|v| v.len() != f) {
            return Err(Error::input("depth maps must match the frames"));
        }
        for (v, cam) in self.cams.iter().enumerate() {
            if self.frames[v].iter().any(|im| im.width != cam.width || im.height != cam.height) {
                return Err(Error::input(format!("view {v} frames do not match its camera")));
            }
        }
        Ok(())
    }

    /// Index of the training camera whose center is nearest `cam`'s.
    pub fn nearest_view(&self, cam: &CameraPose) -> usize {
        let c = cam.center();
        let mut best = (0, f64::INFINITY);
        for (v, p) in self.cams.iter().enumerate() {
            let d = (p.center() - c).norm();
            if d < best.1 {
                best = (v, d);
            }
        }
        best.0
    }
}

/// Mean distance of the training cameras from their centroid, times 1.1.
pub fn camera_extent(cams: &[CameraPose]) -> f64 {
    let centers: Vec<_> = cams.iter().map(CameraPose::center).collect();
    let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len().max(1) as f64;
    1.1 * centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max)
}

/// Stack per-view frame sequences as a latent in `[-1, 1]`.
pub fn images_to_latent(views: &[Vec<Image>]) -> Result<LatentGrid> {
    let first = views.first().and_then(|v| v.first()).ok_or_else(|| Error::input("no frames to encode"))?;
    let shape = LatentShape {
        n_views: views.len(),
        frames: views[0].len(),
        channels: 3,
        height: first.height,
        width: first.width,
    };
    let mut values = Vec::with_capacity(shape.len());
    for view in views {
        if view.len() != shape.frames {
            return Err(Error::input("views differ in frame count"));
        }
        for im in view {
            if im.width != shape.width || im.height != shape.height {
                return Err(Error::input("frames differ in size"));
            }
            for c in 0..3 {
                values.extend(im.data.iter().skip(c).step_by(3).map(|v| 2.0 * v - 1.0));
            }
        }
    }
    LatentGrid::new(shape, values)
}

/// Inverse of [`images_to_latent`].
pub fn latent_to_images(z: &LatentGrid) -> Vec<Vec<Image>> {
    let s = z.shape;
    let plane = s.height * s.width;
    (0..s.n_views)
        .map(|v| {
            (0..s.frames)
                .map(|t| {
                    let mut data = vec![0.0; plane * 3];
                    let base = (v * s.frames + t) * 3 * plane;
                    for c in 0..3 {
                        for p in 0..plane {
                            data[3 * p + c] = 0.5 * (z.values[base + c * plane + p] + 1.0);
                        }
                    }
                    Image {
                        width: s.width,
                        height: s.height,
                        data,
                    }
                })
                .collect()
        })
        .collect()
}

/// Condition for a two-view sample: the reference view's frames, and the
/// reference depth lifted to points and splatted into `novel` per frame.
/// Both are reduced by `downsample`.
pub fn guide_conditioning(data: &TrainingData, reference: usize, novel: &CameraPose, downsample: usize) -> Result<Conditioning> {
    let ref_cam = &data.cams[reference];
    let small = novel.downscaled(downsample);
    let mut ref_frames = Vec::with_capacity(data.n_frames());
    let mut guides = Vec::with_capacity(data.n_frames());
    for t in 0..data.n_frames() {
        let frame = &data.frames[reference][t];
        ref_frames.push(frame.downsample(downsample)?);
        let pc = back_project(&data.depths[reference][t], frame, ref_cam)?;
        guides.push(render_point_cloud(&pc, &small).image);
    }
    let cond = images_to_latent(&[ref_frames, guides])?;
    Conditioning::from_poses(cond, &[ref_cam.clone(), novel.clone()])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    /// Total weighted loss per iteration.
    pub losses: Vec<f64>,
    /// `(iteration, count)` at the start and after every densification.
    pub counts: Vec<(usize, usize)>,
    pub densify: Vec<DensifyReport>,
    pub fmd_steps: usize,
}

struct Grads {
    gaussians: Vec<[f64; GAUSSIAN_PARAMS]>,
    deform: Vec<f64>,
}

impl Grads {
    fn zeros(scene: &SceneState) -> Self {
        Self {
            gaussians: vec![[0.0; GAUSSIAN_PARAMS]; scene.len()],
            deform: scene.deformation.params.zeros_like(),
        }
    }

    fn add_deform(&mut self, params: &[f64], means: &[[f64; 3]], scale: f64) {
        self.deform.iter_mut().zip(params).for_each(|(a, b)| *a += scale * b);
        for (g, m) in self.gaussians.iter_mut().zip(means) {
            for a in 0..3 {
                g[a] += scale * m[a];
            }
        }
    }
}

/// Gradient rows on deformed Gaussians flow unchanged to the canonical
/// parameters and, for mean, rotation and scale, into the offsets.
fn pull_back_deformed(scene: &SceneState, cache: &super::deform::DeformCache, dg: &[[f64; GAUSSIAN_PARAMS]], grads: &mut Grads) -> Result<()> {
    let d_off: Vec<DeformOffset> = dg
        .iter()
        .map(|r| DeformOffset {
            mean: [r[0], r[1], r[2]],
            rotation: [r[3], r[4], r[5], r[6]],
            log_scale: [r[7], r[8], r[9]],
        })
        .collect();
    let back = scene.deformation.backward(cache, &d_off)?;
    for (g, r) in grads.gaussians.iter_mut().zip(dg) {
        for k in 0..GAUSSIAN_PARAMS {
            g[k] += r[k];
        }
    }
    grads.add_deform(&back.params, &back.means, 1.0);
    Ok(())
}

/// Frozen flow model used for distillation.
#[derive(Debug, Clone, Copy)]
pub struct FmdPrior<'a> {
    pub model: &'a VelocityField<f64>,
    pub trajectory: &'a Trajectory,
}

/// One distillation step: render the full sequence at a sampled trajectory
/// pose and at the nearest training view, then pull both toward the prior's
/// clean estimate.
fn fmd_step(
    scene: &SceneState,
    data: &TrainingData,
    prior: &FmdPrior,
    cfg: &OptimizeConfig,
    rng: &mut ChaCha8Rng,
    grads: &mut Grads,
) -> Result<f64> {
    let traj = prior.trajectory;
    let novel = &traj.poses[rng.random_range(0..traj.poses.len())];
    let noise_seed: u64 = rng.random();
    let reference = data.nearest_view(novel);
    let cond = guide_conditioning(data, reference, novel, cfg.fmd_downsample)?;
    let cams = [data.cams[reference].downscaled(cfg.fmd_downsample), novel.downscaled(cfg.fmd_downsample)];
    let means = scene.means();
    let f = data.n_frames();
    let mut caches = Vec::with_capacity(f);
    let mut deformed = Vec::with_capacity(f);
    let mut renders = vec![Vec::with_capacity(f), Vec::with_capacity(f)];
    for t in 1..=f {
        let (off, cache) = scene.deformation.offsets_with_cache(&means, t)?;
        let gs: Vec<Gaussian4D> = scene.gaussians.iter().zip(&off).map(|(g, o)| o.apply(g)).collect();
        for (v, cam) in cams.iter().enumerate() {
            renders[v].push(render_gaussians(&gs, cam, &cfg.raster));
        }
        caches.push(cache);
        deformed.push(gs);
    }
    let images: Vec<Vec<Image>> = renders.iter().map(|v| v.iter().map(|r| r.image()).collect()).collect();
    let x = images_to_latent(&images)?;
    let model = ConditionedField {
        field: prior.model,
        cond: &cond,
    };
    let out = fmd_loss(&x.values, &model, &cfg.fmd, noise_seed)?;
    let lambda = cfg.weights.fmd;
    let s = x.shape;
    let plane = s.width * s.height;
    for t in 0..f {
        let mut dg = vec![[0.0; GAUSSIAN_PARAMS]; scene.len()];
        for (v, cam) in cams.iter().enumerate() {
            let base = (v * f + t) * 3 * plane;
            let mut d_img = vec![0.0; plane * 3];
            for c in 0..3 {
                for p in 0..plane {
                    d_img[3 * p + c] = 2.0 * lambda * out.grad[base + c * plane + p];
                }
            }
            render_backward(&deformed[t], cam, &cfg.raster, &renders[v][t], &d_img, &mut dg, None);
        }
        pull_back_deformed(scene, &caches[t], &dg, grads)?;
    }
    Ok(lambda * out.loss)
}

/// Fit `scene` to the training video.
pub fn optimize(
    scene: &mut SceneState,
    data: &TrainingData,
    prior: Option<&FmdPrior>,
    cfg: &OptimizeConfig,
    seed: u64,
) -> Result<OptimizeReport> {
    cfg.validate()?;
    data.validate()?;
    if data.n_frames() != scene.n_frames() {
        return Err(Error::input(format!(
            "scene deforms over {} frames but the video has {}",
            scene.n_frames(),
            data.n_frames()
        )));
    }
    let f = data.n_frames();
    let extent = camera_extent(data.cams);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fmd_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf3d0_5eed);
    let mut densify_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd3e5_1f7e);
    let use_fmd = prior.is_some() && cfg.weights.fmd > 0.0 && cfg.p_fmd > 0.0;
    let mut report = OptimizeReport {
        counts: vec![(0, scene.len())],
        ..Default::default()
    };
    let k = cfg.arap_neighbors;
    let mut neighbors = None;
    for it in 1..=cfg.iters {
        let v = sample_rng.random_range(0..data.n_views());
        let t = sample_rng.random_range(1..=f);
        let means = scene.means();
        let mut grads = Grads::zeros(scene);
        let (off, cache) = scene.deformation.offsets_with_cache(&means, t)?;
        let deformed: Vec<Gaussian4D> = scene.gaussians.iter().zip(&off).map(|(g, o)| o.apply(g)).collect();
        let cam = &data.cams[v];
        let rendered = render_gaussians(&deformed, cam, &cfg.raster);
        let (mut loss, d_img) = recon_loss(&rendered.image(), &data.frames[v][t - 1], cfg.weights.ssim)?;
        let mut dg = vec![[0.0; GAUSSIAN_PARAMS]; scene.len()];
        let densifying = it <= cfg.densify_until;
        let screen = densifying.then_some((&mut scene.grad_accum[..], &mut scene.grad_count[..]));
        render_backward(&deformed, cam, &cfg.raster, &rendered, &d_img, &mut dg, screen);
        if cfg.weights.arap > 0.0 && scene.len() > k {
            if neighbors.is_none() {
                neighbors = Some(knn(&means, k)?);
            }
            let moved: Vec<[f64; 3]> = deformed.iter().map(|g| g.mean).collect();
            let (l, g) = arap_loss_with_neighbors(&means, &moved, neighbors.as_ref().expect("computed above"))?;
            loss += cfg.weights.arap * l;
            for (row, gi) in dg.iter_mut().zip(&g) {
                for a in 0..3 {
                    row[a] += cfg.weights.arap * gi[a];
                }
            }
        }
        pull_back_deformed(scene, &cache, &dg, &mut grads)?;
        if cfg.weights.rot > 0.0 && f >= 2 {
            let pair = if t < f { [t, t + 1] } else { [t - 1, t] };
            let (l, g) = scene.deformation.rot_loss(&means, &pair)?;
            loss += cfg.weights.rot * l;
            grads.add_deform(&g.params, &g.means, cfg.weights.rot);
        }
        if use_fmd && fmd_rng.random::<f64>() < cfg.p_fmd {
            let prior = prior.expect("checked by use_fmd");
            loss += fmd_step(scene, data, prior, cfg, &mut fmd_rng, &mut grads)?;
            report.fmd_steps += 1;
        }
        scene.adam_step(&grads.gaussians, &grads.deform, &cfg.lr, extent)?;
        report.losses.push(loss);
        if densifying && it >= cfg.densify_from && it % cfg.densify_every == 0 {
            let r = densify_prune(scene, &cfg.densify, extent, &mut densify_rng);
            report.densify.push(r);
            report.counts.push((it, scene.len()));
            neighbors = None;
        }
    }
    Ok(report)
}
