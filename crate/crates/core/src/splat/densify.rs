use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::{normalize_quat, quat_to_matrix};
use super::scene::{SceneState, MAX_GAUSSIANS, PRUNE_OPACITY, PRUNE_TRIGGER};
use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Mean screen-space positional gradient (NDC units) that triggers growth.
    pub grad_threshold: f64,
    /// Gaussians larger than this fraction of the scene extent are split,
    /// smaller ones cloned.
    pub percent_dense: f64,
    pub max_gaussians: usize,
    pub prune_trigger: usize,
    pub prune_opacity: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            max_gaussians: MAX_GAUSSIANS,
            prune_trigger: PRUNE_TRIGGER,
            prune_opacity: PRUNE_OPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub count: usize,
}

/// Split children shrink by this factor.
const SPLIT_SHRINK: f64 = 1.6;

/// Grow high-gradient Gaussians up to the cap, then prune transparent ones
/// if the count exceeds the trigger. Statistics are reset afterwards.
pub fn densify_prune<R: Rng>(scene: &mut SceneState, cfg: &DensifyConfig, extent: f64, rng: &mut R) -> DensifyReport {
    let cap = cfg.max_gaussians.min(MAX_GAUSSIANS);
    let mut report = DensifyReport::default();
    let n = scene.len();
    for i in 0..n {
        if scene.len() >= cap {
            break;
        }
        let count = scene.grad_count[i];
        if count == 0 || scene.grad_accum[i] / (count as f64) < cfg.grad_threshold {
            continue;
        }
        let g = scene.gaussians[i];
        if g.max_scale() > cfg.percent_dense * extent {
            let r = quat_to_matrix(&normalize_quat(&g.rotation));
            let scale = Vector3::new(g.log_scale[0].exp(), g.log_scale[1].exp(), g.log_scale[2].exp());
            let mut children = [g; 2];
            for c in children.iter_mut() {
                let noise = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                let offset = r * scale.component_mul(&noise);
                for a in 0..3 {
                    c.mean[a] += offset[a];
                    c.log_scale[a] -= SPLIT_SHRINK.ln();
                }
            }
            scene.gaussians[i] = children[0];
            scene.optimizer.gaussian_m[i] = Default::default();
            scene.optimizer.gaussian_v[i] = Default::default();
            scene.push(children[1]);
            report.split += 1;
        } else {
            scene.push(g);
            report.cloned += 1;
        }
    }
    if scene.len() > cfg.prune_trigger {
        let keep: Vec<bool> = scene.gaussians.iter().map(|g| g.opacity() >= cfg.prune_opacity).collect();
        report.pruned = keep.iter().filter(|k| !**k).count();
        scene.retain_mask(&keep);
    }
    scene.reset_grad_stats();
    report.count = scene.len();
    report
}
