use nalgebra::Vector3;

use super::camera::CameraPose;
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Camera-frame z depth per pixel, with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::input("depth map buffers do not match its dimensions"));
        }
        if values
            .iter()
            .zip(&valid)
            .any(|(&d, &ok)| ok && !(d > 0.0 && d.is_finite()))
        {
            return Err(Error::input("valid depths must be positive and finite"));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Every pixel valid at the same depth.
    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height], vec![true; width * height])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, p: Vector3<f64>, c: [f64; 3]) {
        self.positions.push(p);
        self.colors.push(c);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
    }
}

/// Point-cloud render: an RGB image plus which pixels received a point.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedGuide {
    pub image: Image,
    pub coverage: Vec<bool>,
}

impl RenderedGuide {
    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

/// Lift every valid depth pixel to a world-space point carrying its color.
pub fn back_project(depth: &DepthMap, image: &Image, pose: &CameraPose) -> Result<PointCloud> {
    if depth.width != image.width || depth.height != image.height {
        return Err(Error::input(format!(
            "depth map is {}x{} but image is {}x{}",
            depth.width, depth.height, image.width, image.height
        )));
    }
    let r_t = pose.rotation_matrix().transpose();
    let mut cloud = PointCloud::default();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            if !depth.valid[i] {
                continue;
            }
            let d = depth.values[i];
            let cam = Vector3::new(
                (u as f64 + 0.5 - pose.cx) / pose.fx * d,
                (v as f64 + 0.5 - pose.cy) / pose.fy * d,
                d,
            );
            cloud.push(r_t * (cam - pose.translation), image.pixel(u, v));
        }
    }
    Ok(cloud)
}

/// Perspective point splatting with a nearest-depth z-buffer.
///
/// Each point lands in the single pixel containing its projection. Points at
/// or behind the camera plane are culled; depth ties keep the lower index.
pub fn render_point_cloud(pc: &PointCloud, cam: &CameraPose) -> RenderedGuide {
    let (w, h) = (cam.width, cam.height);
    let mut image = Image::black(w, h);
    let mut coverage = vec![false; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];
    let rot = cam.rotation_matrix();
    for (p, color) in pc.positions.iter().zip(&pc.colors) {
        let c = rot * p + cam.translation;
        if !(c.z > 0.0) {
            continue;
        }
        let u = cam.fx * c.x / c.z + cam.cx;
        let v = cam.fy * c.y / c.z + cam.cy;
        if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
            continue;
        }
        let i = (v.floor() as usize) * w + u.floor() as usize;
        if c.z < zbuf[i] {
            zbuf[i] = c.z;
            coverage[i] = true;
            image.data[i * 3..i * 3 + 3].copy_from_slice(color);
        }
    }
    RenderedGuide { image, coverage }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Quaternion, UnitQuaternion};

    fn identity_cam(w: usize, h: usize, f: f64, c: f64) -> CameraPose {
        CameraPose::new(Quaternion::identity(), Vector3::zeros(), f, f, c, c, w, h).unwrap()
    }

    #[test]
    fn pixel_center_ray_identity_case() {
        let cam = identity_cam(1, 1, 1.0, 0.0);
        let depth = DepthMap::constant(1, 1, 1.0).unwrap();
        let img = Image::filled(1, 1, [0.2, 0.4, 0.6]);
        let pc = back_project(&depth, &img, &cam).unwrap();
        assert_eq!(pc.len(), 1);
        assert!((pc.positions[0] - Vector3::new(0.5, 0.5, 1.0)).norm() < 1e-15);
        assert_eq!(pc.colors[0], [0.2, 0.4, 0.6]);
    }

    #[test]
    fn all_invalid_gives_empty_cloud() {
        let cam = identity_cam(4, 3, 2.0, 2.0);
        let pc = back_project(&DepthMap::invalid(4, 3), &Image::black(4, 3), &cam).unwrap();
        assert!(pc.is_empty());
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let cam = identity_cam(4, 3, 2.0, 2.0);
        let err = back_project(&DepthMap::invalid(4, 3), &Image::black(3, 3), &cam).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn plane_depth_stays_on_plane() {
        let q = UnitQuaternion::from_euler_angles(0.2, -0.5, 0.9);
        let cam = CameraPose::new(*q.quaternion(), Vector3::new(0.3, -0.2, 1.0), 40.0, 42.0, 15.5, 12.0, 32, 24)
            .unwrap();
        let depth = DepthMap::constant(32, 24, 5.0).unwrap();
        let pc = back_project(&depth, &Image::black(32, 24), &cam).unwrap();
        assert_eq!(pc.len(), 32 * 24);
        for p in &pc.positions {
            assert!((cam.world_to_camera(p).z - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_cloud_renders_black() {
        let cam = identity_cam(5, 4, 3.0, 2.0);
        let g = render_point_cloud(&PointCloud::default(), &cam);
        assert!(g.image.data.iter().all(|&v| v == 0.0));
        assert_eq!(g.covered_count(), 0);
    }

    #[test]
    fn nearest_point_wins_on_shared_ray() {
        let cam = identity_cam(3, 3, 1.0, 1.5);
        let mut pc = PointCloud::default();
        pc.push(Vector3::new(0.0, 0.0, 2.0) * 1.0, [0.0, 0.0, 1.0]);
        pc.push(Vector3::new(0.0, 0.0, 1.0), [1.0, 0.0, 0.0]);
        pc.push(Vector3::new(0.0, 0.0, -1.0), [0.0, 1.0, 0.0]);
        let g = render_point_cloud(&pc, &cam);
        assert_eq!(g.image.pixel(1, 1), [1.0, 0.0, 0.0]);
        assert_eq!(g.covered_count(), 1);
    }

    #[test]
    fn equal_depth_keeps_lower_index() {
        let cam = identity_cam(3, 3, 1.0, 1.5);
        let mut pc = PointCloud::default();
        pc.push(Vector3::new(0.0, 0.0, 1.0), [0.1, 0.1, 0.1]);
        pc.push(Vector3::new(0.0, 0.0, 1.0), [0.9, 0.9, 0.9]);
        assert_eq!(render_point_cloud(&pc, &cam).image.pixel(1, 1), [0.1, 0.1, 0.1]);
    }
}
