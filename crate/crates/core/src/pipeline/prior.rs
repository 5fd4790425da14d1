use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{PipelineConfig, PriorConfig};
use super::synth::SyntheticScene;
use crate::error::{Error, Result};
use crate::flow::NoiseSchedule;
use crate::model::{Conditioning, LatentGrid, VelocityField};
use crate::splat::{guide_conditioning, images_to_latent};

/// One training pair: the reference and novel views rendered at the
/// distillation resolution, with the conditioning used during fitting.
#[derive(Debug, Clone)]
pub struct PriorSample {
    pub target: LatentGrid,
    pub cond: Conditioning,
}

/// Scene seeds for the prior, drawn from a stream disjoint from the
/// benchmark scene's.
pub fn prior_scene_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..n).map(|_| rng.random::<u64>()).filter(|s| *s != seed).collect()
}

/// Samples from synthetic scenes other than the benchmark's.
pub fn prior_dataset(cfg: &PipelineConfig, seed: u64) -> Result<Vec<PriorSample>> {
    let p = &cfg.prior;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a4d_91e0);
    let mut out = Vec::with_capacity(p.scenes * p.samples_per_scene);
    for scene_seed in prior_scene_seeds(seed, p.scenes) {
        let scene = SyntheticScene::new(cfg.scene, scene_seed)?;
        let bundle = scene.bundle(scene_seed, "")?;
        let data = bundle.training_data();
        let ring = scene.camera_loop()?;
        for _ in 0..p.samples_per_scene {
            let novel = ring.pose_at(rng.random_range(0.0..ring.span()));
            let reference = data.nearest_view(&novel);
            let cams = [bundle.cams[reference].downscaled(p.downsample), novel.downscaled(p.downsample)];
            let views = cams
                .iter()
                .map(|c| (1..=cfg.scene.frames).map(|t| Ok(scene.render(c, t)?.image())).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            out.push(PriorSample {
                target: images_to_latent(&views)?,
                cond: guide_conditioning(&data, reference, &novel, p.downsample)?,
            });
        }
    }
    Ok(out)
}

/// Adam state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    pub lr: f64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PriorTraining {
    pub model: VelocityField<f64>,
    /// Per-step mean squared velocity error.
    pub losses: Vec<f64>,
}

/// Conditional flow matching with Adam, one sample per step.
pub fn train_prior(samples: &[PriorSample], cfg: &PriorConfig, seed: u64) -> Result<PriorTraining> {
    if samples.is_empty() {
        return Err(Error::input("prior training needs at least one sample"));
    }
    let mut model = VelocityField::<f64>::new(cfg.model, seed)?;
    let mut adam = Adam::new(model.n_params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_0c0d);
    let schedule = NoiseSchedule::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let s = &samples[rng.random_range(0..samples.len())];
        let tau = schedule.sample_tau(&mut rng);
        let eps = schedule.sample_noise(&mut rng, s.target.values.len());
        let z_tau = LatentGrid {
            shape: s.target.shape,
            values: s.target.values.iter().zip(&eps).map(|(z, e)| (1.0 - tau) * z + tau * e).collect(),
        };
        let (v, tape) = model.forward_with_tape(&z_tau, tau, &s.cond)?;
        let n = v.values.len() as f64;
        let mut up = v.clone();
        let mut loss = 0.0;
        for ((u, e), z) in up.values.iter_mut().zip(&eps).zip(&s.target.values) {
            let r = *u - (e - z);
            loss += r * r;
            *u = 2.0 * r / n;
        }
        let g = model.backward(&tape, &up)?;
        adam.update(model.params.as_mut_slice(), &g.params);
        losses.push(loss / n);
    }
    Ok(PriorTraining { model, losses })
}
