use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Number of scalars per Gaussian in flat parameter order:
/// mean (3), quaternion `w, x, y, z` (4), log-scale (3), opacity logit (1),
/// color (3).
pub const GAUSSIAN_PARAMS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian4D {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian4D {
    pub fn isotropic(mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [scale.ln(); 3],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn to_array(&self) -> [f64; GAUSSIAN_PARAMS] {
        let mut a = [0.0; GAUSSIAN_PARAMS];
        a[0..3].copy_from_slice(&self.mean);
        a[3..7].copy_from_slice(&self.rotation);
        a[7..10].copy_from_slice(&self.log_scale);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color);
        a
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self {
            mean: [a[0], a[1], a[2]],
            rotation: [a[3], a[4], a[5], a[6]],
            log_scale: [a[7], a[8], a[9]],
            opacity_logit: a[10],
            color: [a[11], a[12], a[13]],
        }
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp()
    }

    /// `R(q) diag(exp(2s)) R(q)ᵀ` with `q` normalised first.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = quat_to_matrix(&normalize_quat(&self.rotation));
        let s = Matrix3::from_diagonal(&Vector3::new(
            (2.0 * self.log_scale[0]).exp(),
            (2.0 * self.log_scale[1]).exp(),
            (2.0 * self.log_scale[2]).exp(),
        ));
        r * s * r.transpose()
    }
}

pub fn normalize_quat(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `w, x, y, z`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `<G, R(q)>` with respect to the unit quaternion `q`.
pub fn quat_matrix_grad(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// Pull a gradient on the normalised quaternion back to the raw one.
pub fn normalize_quat_grad(q: &[f64; 4], g: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return [0.0; 4];
    }
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    [
        (g[0] - u[0] * dot) / n,
        (g[1] - u[1] * dot) / n,
        (g[2] - u[2] * dot) / n,
        (g[3] - u[3] * dot) / n,
    ]
}
