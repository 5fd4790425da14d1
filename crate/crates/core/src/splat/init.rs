use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::deform::DeformationField;
use super::gaussian::Gaussian4D;
use super::scene::{SceneState, MAX_GAUSSIANS};
use crate::error::{Error, Result};
use crate::geometry::{back_project, CameraPose, DepthMap, PointCloud};
use crate::imaging::Image;

/// Opacity given to every initial Gaussian.
pub const INIT_OPACITY: f64 = 0.1;

/// Merge back-projected frames and average the points in each voxel.
/// Voxels are visited in key order, so the result is deterministic.
pub fn fuse_depths(frames: &[Image], depths: &[DepthMap], cams: &[CameraPose], voxel: f64) -> Result<PointCloud> {
    if frames.len() != depths.len() || frames.len() != cams.len() {
        return Err(Error::input(format!(
            "{} frames, {} depth maps and {} cameras",
            frames.len(),
            depths.len(),
            cams.len()
        )));
    }
    if !(voxel > 0.0) {
        return Err(Error::input("voxel size must be positive"));
    }
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, [f64; 3], usize)> = BTreeMap::new();
    for ((img, d), cam) in frames.iter().zip(depths).zip(cams) {
        let pc = back_project(d, img, cam)?;
        for (p, c) in pc.positions.iter().zip(&pc.colors) {
            let key = [
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            ];
            let e = cells.entry(key).or_insert((Vector3::zeros(), [0.0; 3], 0));
            e.0 += p;
            for k in 0..3 {
                e.1[k] += c[k];
            }
            e.2 += 1;
        }
    }
    let mut out = PointCloud::default();
    for (_, (sum, color, n)) in cells {
        let n = n as f64;
        out.push(sum / n, color.map(|c| c / n));
    }
    Ok(out)
}

/// Root mean squared distance to the three nearest other points, or
/// `fallback` for an isolated point.
fn neighbour_scales(points: &[Vector3<f64>], fallback: f64) -> Vec<f64> {
    let mut best = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut d = [f64::INFINITY; 3];
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let v = (p - q).norm_squared();
            if v < d[2] {
                d[2] = v;
                d.sort_by(f64::total_cmp);
            }
        }
        let finite: Vec<f64> = d.iter().cloned().filter(|v| v.is_finite()).collect();
        let s = if finite.is_empty() {
            fallback
        } else {
            (finite.iter().sum::<f64>() / finite.len() as f64).sqrt().max(1e-7)
        };
        best.push(s);
    }
    best
}

/// Isotropic Gaussians at the points of a cloud.
pub fn gaussians_from_points(pc: &PointCloud, fallback_scale: f64) -> Vec<Gaussian4D> {
    let scales = neighbour_scales(&pc.positions, fallback_scale);
    pc.positions
        .iter()
        .zip(&pc.colors)
        .zip(scales)
        .map(|((p, c), s)| Gaussian4D::isotropic([p.x, p.y, p.z], s, INIT_OPACITY, *c))
        .collect()
}

/// Scene seeded from fused first-frame depth of every view.
pub fn init_from_depth(
    frames: &[Image],
    depths: &[DepthMap],
    cams: &[CameraPose],
    voxel: f64,
    deformation: DeformationField,
) -> Result<SceneState> {
    let pc = fuse_depths(frames, depths, cams, voxel)?;
    if pc.is_empty() {
        return Err(Error::input("depth fusion produced no points"));
    }
    if pc.len() > MAX_GAUSSIANS {
        return Err(Error::input(format!(
            "depth fusion produced {} points; use a larger voxel",
            pc.len()
        )));
    }
    SceneState::new(gaussians_from_points(&pc, voxel), deformation)
}

/// Scene seeded with `n` Gaussians uniform in a ball, with random colors.
pub fn init_random(n: usize, center: [f64; 3], radius: f64, seed: u64, deformation: DeformationField) -> Result<SceneState> {
    if n == 0 || n > MAX_GAUSSIANS {
        return Err(Error::input(format!("random init count {n} outside 1..={MAX_GAUSSIANS}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pc = PointCloud::default();
    while pc.len() < n {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            let p = Vector3::from(center) + v * radius;
            pc.push(p, [rng.random(), rng.random(), rng.random()]);
        }
    }
    SceneState::new(gaussians_from_points(&pc, radius * 0.1), deformation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::deform::DeformConfig;
    use nalgebra::UnitQuaternion;

    fn cam() -> CameraPose {
        CameraPose::new(*UnitQuaternion::identity().quaternion(), Vector3::zeros(), 4.0, 4.0, 2.0, 2.0, 4, 4).unwrap()
    }

    fn field() -> DeformationField {
        DeformationField::zeros(DeformConfig::default(), 2).unwrap()
    }

    #[test]
    fn single_pixel_gives_one_gaussian() {
        let mut img = Image::black(4, 4);
        img.set_pixel(1, 2, [0.9, 0.1, 0.3]);
        let mut d = DepthMap::invalid(4, 4);
        d.values[2 * 4 + 1] = 2.0;
        d.valid[2 * 4 + 1] = true;
        let s = init_from_depth(&[img], &[d], &[cam()], 0.05, field()).unwrap();
        assert_eq!(s.len(), 1);
        let g = s.gaussians[0];
        assert!((g.mean[0] - (1.5 - 2.0) / 4.0 * 2.0).abs() < 1e-12);
        assert!((g.mean[1] - (2.5 - 2.0) / 4.0 * 2.0).abs() < 1e-12);
        assert!((g.mean[2] - 2.0).abs() < 1e-12);
        assert_eq!(g.color, [0.9, 0.1, 0.3]);
        assert!((g.opacity() - INIT_OPACITY).abs() < 1e-12);
    }

    #[test]
    fn empty_fusion_is_an_error() {
        let r = init_from_depth(&[Image::black(4, 4)], &[DepthMap::invalid(4, 4)], &[cam()], 0.05, field());
        assert!(r.is_err());
    }

    #[test]
    fn fused_count_bounded_by_inputs() {
        let img = Image::filled(4, 4, [0.5; 3]);
        let d = DepthMap::constant(4, 4, 3.0).unwrap();
        let pc = fuse_depths(&[img.clone(), img], &[d.clone(), d], &[cam(), cam()], 0.3).unwrap();
        assert!(pc.len() <= 32 && !pc.is_empty());
    }
}
