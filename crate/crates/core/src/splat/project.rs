use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::gaussian::{normalize_quat, normalize_quat_grad, quat_matrix_grad, quat_to_matrix, Gaussian4D};
use crate::geometry::CameraPose;

/// Variance added to both screen axes, in px².
pub const LOW_PASS: f64 = 0.3;
/// Gaussians with camera-space depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub mean: [f64; 2],
    /// Symmetric covariance `[a, b, c]` for `[[a, b], [b, c]]`, in px².
    pub cov: [f64; 3],
    pub depth: f64,
}

/// Gradients with respect to the 3D parameters that enter the projection.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectionGrad {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
}

struct Parts {
    w: Matrix3<f64>,
    x_cam: Vector3<f64>,
    j: Matrix2x3<f64>,
    rq: Matrix3<f64>,
    s: Vector3<f64>,
    sigma_cam: Matrix3<f64>,
    qn: [f64; 4],
}

fn parts(g: &Gaussian4D, cam: &CameraPose) -> Option<Parts> {
    let w = cam.rotation_matrix();
    let x_cam = w * Vector3::from(g.mean) + cam.translation;
    let z = x_cam.z;
    if z <= NEAR_PLANE {
        return None;
    }
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x_cam.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * x_cam.y / (z * z),
    );
    let qn = normalize_quat(&g.rotation);
    let rq = quat_to_matrix(&qn);
    let s = Vector3::new(g.log_scale[0].exp(), g.log_scale[1].exp(), g.log_scale[2].exp());
    let m = rq * Matrix3::from_diagonal(&s);
    let sigma = m * m.transpose();
    let sigma_cam = w * sigma * w.transpose();
    Some(Parts {
        w,
        x_cam,
        j,
        rq,
        s,
        sigma_cam,
        qn,
    })
}

/// Perspective projection with the local affine approximation of the
/// covariance. Returns `None` for Gaussians at or behind the near plane.
pub fn project_gaussian(g: &Gaussian4D, cam: &CameraPose) -> Option<Projected> {
    let p = parts(g, cam)?;
    let z = p.x_cam.z;
    let c2: Matrix2<f64> = p.j * p.sigma_cam * p.j.transpose();
    Some(Projected {
        mean: [cam.fx * p.x_cam.x / z + cam.cx, cam.fy * p.x_cam.y / z + cam.cy],
        cov: [c2[(0, 0)] + LOW_PASS, 0.5 * (c2[(0, 1)] + c2[(1, 0)]), c2[(1, 1)] + LOW_PASS],
        depth: z,
    })
}

/// Reverse of [`project_gaussian`] for upstream gradients on the projected
/// mean and covariance entries `[a, b, c]`.
pub fn project_gaussian_backward(g: &Gaussian4D, cam: &CameraPose, d_mean: [f64; 2], d_cov: [f64; 3]) -> ProjectionGrad {
    let Some(p) = parts(g, cam) else {
        return ProjectionGrad::default();
    };
    let (x, y, z) = (p.x_cam.x, p.x_cam.y, p.x_cam.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let mut dxc = Vector3::new(
        d_mean[0] * fx / z,
        d_mean[1] * fy / z,
        -d_mean[0] * fx * x / (z * z) - d_mean[1] * fy * y / (z * z),
    );
    // symmetric upstream: b appears twice in the matrix
    let g2 = Matrix2::new(d_cov[0], 0.5 * d_cov[1], 0.5 * d_cov[1], d_cov[2]);
    let d_sigma_cam = p.j.transpose() * g2 * p.j;
    let dj = 2.0 * g2 * p.j * p.sigma_cam;
    dxc.x += dj[(0, 2)] * (-fx / (z * z));
    dxc.y += dj[(1, 2)] * (-fy / (z * z));
    dxc.z += dj[(0, 0)] * (-fx / (z * z))
        + dj[(0, 2)] * (2.0 * fx * x / (z * z * z))
        + dj[(1, 1)] * (-fy / (z * z))
        + dj[(1, 2)] * (2.0 * fy * y / (z * z * z));
    let dmean = p.w.transpose() * dxc;
    let d_sigma = p.w.transpose() * d_sigma_cam * p.w;
    let m = p.rq * Matrix3::from_diagonal(&p.s);
    let dm = 2.0 * d_sigma * m;
    let mut drq = Matrix3::zeros();
    let mut dlog = [0.0; 3];
    for i in 0..3 {
        for k in 0..3 {
            drq[(i, k)] = dm[(i, k)] * p.s[k];
            dlog[k] += dm[(i, k)] * p.rq[(i, k)] * p.s[k];
        }
    }
    let dq = normalize_quat_grad(&g.rotation, &quat_matrix_grad(&p.qn, &drq));
    ProjectionGrad {
        mean: [dmean.x, dmean.y, dmean.z],
        rotation: dq,
        log_scale: dlog,
    }
}
