use std::path::Path;

use serde::{Deserialize, Serialize};

use super::deform::{deform_gaussians, DeformationField};
use super::gaussian::{Gaussian4D, GAUSSIAN_PARAMS};
use crate::container::ArrayContainer;
use crate::error::{Error, Result};

/// Hard upper bound on the Gaussian count.
pub const MAX_GAUSSIANS: usize = 120_000;
/// Pruning only runs above this count.
pub const PRUNE_TRIGGER: usize = 80_000;
/// Gaussians below this opacity are pruned.
pub const PRUNE_OPACITY: f64 = 0.015;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam moments, kept aligned with the Gaussian list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub gaussian_m: Vec<[f64; GAUSSIAN_PARAMS]>,
    pub gaussian_v: Vec<[f64; GAUSSIAN_PARAMS]>,
    pub deform_m: Vec<f64>,
    pub deform_v: Vec<f64>,
}

/// Per-group Adam step sizes. The mean rate is multiplied by the scene
/// extent at use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub means: f64,
    pub colors: f64,
    pub opacity: f64,
    pub scales: f64,
    pub rotations: f64,
    pub deformation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            colors: 2.5e-3,
            opacity: 5e-2,
            scales: 5e-3,
            rotations: 1e-3,
            deformation: 1e-3,
        }
    }
}

impl LearningRates {
    /// Step size for each slot of [`Gaussian4D::to_array`].
    fn per_slot(&self, extent: f64) -> [f64; GAUSSIAN_PARAMS] {
        let mut lr = [0.0; GAUSSIAN_PARAMS];
        lr[0..3].fill(self.means * extent);
        lr[3..7].fill(self.rotations);
        lr[7..10].fill(self.scales);
        lr[10] = self.opacity;
        lr[11..14].fill(self.colors);
        lr
    }
}

fn adam(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
}

/// Canonical Gaussians, their deformation field, densification statistics
/// and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub gaussians: Vec<Gaussian4D>,
    pub deformation: DeformationField,
    /// Summed screen-space positional gradient norms.
    pub grad_accum: Vec<f64>,
    /// Number of renders each Gaussian was visible in since the last reset.
    pub grad_count: Vec<u32>,
    pub optimizer: OptimizerState,
}

impl SceneState {
    pub fn new(gaussians: Vec<Gaussian4D>, deformation: DeformationField) -> Result<Self> {
        if gaussians.len() > MAX_GAUSSIANS {
            return Err(Error::input(format!(
                "{} Gaussians exceed the cap of {MAX_GAUSSIANS}",
                gaussians.len()
            )));
        }
        let n = gaussians.len();
        let np = deformation.params.len();
        Ok(Self {
            gaussians,
            deformation,
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            optimizer: OptimizerState {
                step: 0,
                gaussian_m: vec![[0.0; GAUSSIAN_PARAMS]; n],
                gaussian_v: vec![[0.0; GAUSSIAN_PARAMS]; n],
                deform_m: vec![0.0; np],
                deform_v: vec![0.0; np],
            },
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        self.deformation.n_frames
    }

    pub fn means(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().map(|g| g.mean).collect()
    }

    /// Gaussians at 1-based timestamp `t`.
    pub fn deform(&self, t: usize) -> Result<Vec<Gaussian4D>> {
        deform_gaussians(&self.gaussians, &self.deformation, t)
    }

    /// Whether every per-Gaussian buffer matches the Gaussian count.
    pub fn is_aligned(&self) -> bool {
        let n = self.len();
        self.grad_accum.len() == n
            && self.grad_count.len() == n
            && self.optimizer.gaussian_m.len() == n
            && self.optimizer.gaussian_v.len() == n
    }

    /// Append a Gaussian with fresh statistics. Returns false at the cap.
    pub(crate) fn push(&mut self, g: Gaussian4D) -> bool {
        if self.len() >= MAX_GAUSSIANS {
            return false;
        }
        self.gaussians.push(g);
        self.grad_accum.push(0.0);
        self.grad_count.push(0);
        self.optimizer.gaussian_m.push([0.0; GAUSSIAN_PARAMS]);
        self.optimizer.gaussian_v.push([0.0; GAUSSIAN_PARAMS]);
        true
    }

    /// Keep only the Gaussians for which `keep` is true.
    pub(crate) fn retain_mask(&mut self, keep: &[bool]) {
        fn filter<T: Clone>(v: &mut Vec<T>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                i += 1;
                keep[i - 1]
            });
        }
        filter(&mut self.gaussians, keep);
        filter(&mut self.grad_accum, keep);
        filter(&mut self.grad_count, keep);
        filter(&mut self.optimizer.gaussian_m, keep);
        filter(&mut self.optimizer.gaussian_v, keep);
    }

    pub fn reset_grad_stats(&mut self) {
        self.grad_accum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_count.iter_mut().for_each(|v| *v = 0);
    }

    /// One Adam step on every Gaussian and the deformation network.
    pub fn adam_step(
        &mut self,
        gaussian_grads: &[[f64; GAUSSIAN_PARAMS]],
        deform_grad: &[f64],
        lr: &LearningRates,
        extent: f64,
    ) -> Result<()> {
        if gaussian_grads.len() != self.len() || deform_grad.len() != self.deformation.params.len() {
            return Err(Error::State("gradient buffers do not match the scene".into()));
        }
        let opt = &mut self.optimizer;
        opt.step += 1;
        let c1 = 1.0 - BETA1.powi(opt.step as i32);
        let c2 = 1.0 - BETA2.powi(opt.step as i32);
        let slots = lr.per_slot(extent);
        for (i, g) in self.gaussians.iter_mut().enumerate() {
            let mut a = g.to_array();
            for k in 0..GAUSSIAN_PARAMS {
                adam(
                    &mut a[k],
                    gaussian_grads[i][k],
                    &mut opt.gaussian_m[i][k],
                    &mut opt.gaussian_v[i][k],
                    slots[k],
                    c1,
                    c2,
                );
            }
            *g = Gaussian4D::from_array(&a);
        }
        let params = self.deformation.params.as_mut_slice();
        for k in 0..params.len() {
            adam(
                &mut params[k],
                deform_grad[k],
                &mut opt.deform_m[k],
                &mut opt.deform_v[k],
                lr.deformation,
                c1,
                c2,
            );
        }
        Ok(())
    }

    /// Gaussians and deformation network; optimizer moments and
    /// densification statistics are not stored.
    pub fn to_container(&self) -> ArrayContainer {
        let mut c = self.deformation.to_container();
        let deform_meta = std::mem::take(&mut c.meta);
        let flat: Vec<f64> = self.gaussians.iter().flat_map(|g| g.to_array()).collect();
        c.push("gaussians", vec![self.len(), GAUSSIAN_PARAMS], flat);
        c.meta = serde_json::json!({ "kind": "scene", "deformation": deform_meta });
        c
    }

    pub fn from_container(c: &ArrayContainer) -> Result<Self> {
        if c.meta["kind"] != "scene" {
            return Err(Error::Format("container does not hold a scene".into()));
        }
        let mut inner = c.clone();
        inner.meta = c.meta["deformation"].clone();
        let deformation = DeformationField::from_container(&inner)?;
        let arr = c.require("gaussians")?;
        if arr.shape.len() != 2 || arr.shape[1] != GAUSSIAN_PARAMS {
            return Err(Error::Format(format!("gaussian array has shape {:?}", arr.shape)));
        }
        let gaussians = arr.data.chunks(GAUSSIAN_PARAMS).map(Gaussian4D::from_array).collect();
        Self::new(gaussians, deformation)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&ArrayContainer::load(path)?)
    }
}
