use super::gaussian::{Gaussian4D, GAUSSIAN_PARAMS};
use super::project::{project_gaussian, project_gaussian_backward};
use super::raster::{rasterize, rasterize_backward, RasterConfig, RasterOutput, Splat};
use super::scene::SceneState;
use crate::error::Result;
use crate::geometry::{CameraPose, DepthMap};
use crate::imaging::Image;

/// Pixels with less accumulated opacity than this get no depth.
pub const DEPTH_MIN_ALPHA: f64 = 0.5;

/// Rasterized view plus what the reverse pass needs.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub output: RasterOutput<f64>,
    /// Input index of each splat.
    pub visible: Vec<usize>,
    pub splats: Vec<Splat<f64>>,
}

impl Rendered {
    pub fn image(&self) -> Image {
        Image {
            width: self.output.width,
            height: self.output.height,
            data: self.output.color.clone(),
        }
    }

    /// Opacity-normalised depth, valid where enough opacity accumulated.
    pub fn depth_map(&self) -> DepthMap {
        let o = &self.output;
        let mut d = DepthMap::invalid(o.width, o.height);
        for p in 0..o.width * o.height {
            if o.alpha[p] >= DEPTH_MIN_ALPHA {
                let z = o.depth[p] / o.alpha[p];
                if z > 0.0 && z.is_finite() {
                    d.values[p] = z;
                    d.valid[p] = true;
                }
            }
        }
        d
    }
}

fn in_view(p: &[f64; 2], cov: &[f64; 3], w: usize, h: usize, sigma: f64) -> bool {
    let rx = sigma * cov[0].sqrt();
    let ry = sigma * cov[2].sqrt();
    p[0] + rx >= 0.0 && p[1] + ry >= 0.0 && p[0] - rx <= w as f64 && p[1] - ry <= h as f64
}

/// Project and rasterize Gaussians into `cam`.
pub fn render_gaussians(gaussians: &[Gaussian4D], cam: &CameraPose, cfg: &RasterConfig) -> Rendered {
    let mut visible = Vec::new();
    let mut splats = Vec::new();
    let sigma = if cfg.extent_sigma.is_finite() { cfg.extent_sigma } else { f64::INFINITY };
    for (i, g) in gaussians.iter().enumerate() {
        let Some(p) = project_gaussian(g, cam) else {
            continue;
        };
        if sigma.is_finite() && !in_view(&p.mean, &p.cov, cam.width, cam.height, sigma) {
            continue;
        }
        visible.push(i);
        splats.push(Splat {
            mean: p.mean,
            cov: p.cov,
            depth: p.depth,
            opacity: g.opacity(),
            color: g.color,
        });
    }
    let output = rasterize(&splats, cam.width, cam.height, cfg);
    Rendered { output, visible, splats }
}

/// Add the gradient of `<d_image, image>` to `grads` (one row per input
/// Gaussian, in [`Gaussian4D::to_array`] order). When `screen` is given,
/// the norm of each visible Gaussian's NDC-space mean gradient is added to
/// it and `seen` counts the Gaussian.
#[allow(clippy::too_many_arguments)]
pub fn render_backward(
    gaussians: &[Gaussian4D],
    cam: &CameraPose,
    cfg: &RasterConfig,
    rendered: &Rendered,
    d_image: &[f64],
    grads: &mut [[f64; GAUSSIAN_PARAMS]],
    mut screen: Option<(&mut [f64], &mut [u32])>,
) {
    let sg = rasterize_backward(&rendered.splats, cam.width, cam.height, cfg, d_image);
    for (k, &i) in rendered.visible.iter().enumerate() {
        let g = &gaussians[i];
        let s = &sg[k];
        let pg = project_gaussian_backward(g, cam, s.mean, s.cov);
        let row = &mut grads[i];
        for a in 0..3 {
            row[a] += pg.mean[a];
            row[7 + a] += pg.log_scale[a];
            row[11 + a] += s.color[a];
        }
        for a in 0..4 {
            row[3 + a] += pg.rotation[a];
        }
        let o = rendered.splats[k].opacity;
        row[10] += s.opacity * o * (1.0 - o);
        if let Some((acc, seen)) = screen.as_mut() {
            let nx = s.mean[0] * cam.width as f64 * 0.5;
            let ny = s.mean[1] * cam.height as f64 * 0.5;
            acc[i] += (nx * nx + ny * ny).sqrt();
            seen[i] += 1;
        }
    }
}

/// Render the deformed scene at 1-based timestamp `t`.
pub fn render_scene(scene: &SceneState, cam: &CameraPose, t: usize, cfg: &RasterConfig) -> Result<Rendered> {
    Ok(render_gaussians(&scene.deform(t)?, cam, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    #[test]
    fn gaussian_gradients_match_finite_differences() {
        let cam = CameraPose::new(
            *UnitQuaternion::from_euler_angles(0.05, 0.1, 0.0).quaternion(),
            Vector3::new(0.0, 0.0, 0.2),
            20.0,
            20.0,
            8.0,
            8.0,
            16,
            16,
        )
        .unwrap();
        let gs = vec![
            Gaussian4D {
                mean: [0.1, -0.1, 2.0],
                rotation: [0.95, 0.1, 0.2, -0.1],
                log_scale: [-1.2, -1.6, -1.4],
                opacity_logit: 0.3,
                color: [0.8, 0.2, 0.4],
            },
            Gaussian4D {
                mean: [-0.2, 0.15, 2.5],
                rotation: [0.9, -0.2, 0.1, 0.3],
                log_scale: [-1.0, -1.3, -1.1],
                opacity_logit: -0.2,
                color: [0.1, 0.7, 0.5],
            },
        ];
        let cfg = RasterConfig::exact();
        let w: Vec<f64> = (0..16 * 16 * 3).map(|i| ((i * 37 % 17) as f64 / 8.0) - 1.0).collect();
        let f = |gs: &[Gaussian4D]| -> f64 {
            render_gaussians(gs, &cam, &cfg).output.color.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let r = render_gaussians(&gs, &cam, &cfg);
        let mut grads = vec![[0.0; GAUSSIAN_PARAMS]; 2];
        render_backward(&gs, &cam, &cfg, &r, &w, &mut grads, None);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..GAUSSIAN_PARAMS {
                let (mut p, mut m) = (gs.clone(), gs.clone());
                let mut a = p[i].to_array();
                a[k] += h;
                p[i] = Gaussian4D::from_array(&a);
                let mut b = m[i].to_array();
                b[k] -= h;
                m[i] = Gaussian4D::from_array(&b);
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                assert!((fd - grads[i][k]).abs() < 1e-5 * (1.0 + fd.abs()), "gaussian {i} slot {k}: {fd} vs {}", grads[i][k]);
            }
        }
    }
}
