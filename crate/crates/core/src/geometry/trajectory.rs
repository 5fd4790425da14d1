use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::camera::CameraPose;
use crate::error::{Error, Result};

/// Angles below this use normalized linear interpolation instead of SLERP.
const SLERP_SMALL_ANGLE: f64 = 1e-6;

/// Sampled camera path: `poses[j]` sits at loop parameter `knot_times[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<CameraPose>,
    pub knot_times: Vec<f64>,
}

/// Mean of the camera centers.
pub fn scene_center(poses: &[CameraPose]) -> Vector3<f64> {
    let sum: Vector3<f64> = poses.iter().map(CameraPose::center).sum();
    sum / poses.len() as f64
}

/// Reorder cameras by ascending azimuth `atan2(z - c_z, x - c_x)` around the
/// mean camera center, measured in the horizontal x-z plane.
pub fn sort_by_azimuth(poses: &[CameraPose]) -> Result<Vec<CameraPose>> {
    if poses.len() < 2 {
        return Err(Error::input(format!(
            "azimuth sort needs at least 2 cameras, got {}",
            poses.len()
        )));
    }
    let c = scene_center(poses);
    let mut keyed = Vec::with_capacity(poses.len());
    for (i, p) in poses.iter().enumerate() {
        let d = p.center() - c;
        if d.x == 0.0 && d.z == 0.0 {
            return Err(Error::input(format!(
                "camera {i} sits on the scene center axis; its azimuth is undefined"
            )));
        }
        keyed.push((d.z.atan2(d.x), i));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().map(|(_, i)| poses[i].clone()).collect())
}

/// Natural cubic spline through `values[k]` at integer knots `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    values: Vec<Vector3<f64>>,
    second: Vec<Vector3<f64>>,
}

impl CubicSpline {
    pub fn natural(values: Vec<Vector3<f64>>) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::input("a spline needs at least 2 knots"));
        }
        let mut second = vec![Vector3::zeros(); n];
        if n > 2 {
            // M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]) for the
            // interior knots, M[0] = M[n-1] = 0. Thomas algorithm.
            let m = n - 2;
            let mut diag = vec![4.0; m];
            let mut rhs: Vec<Vector3<f64>> = (1..n - 1)
                .map(|i| (values[i + 1] - values[i] * 2.0 + values[i - 1]) * 6.0)
                .collect();
            for i in 1..m {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                let prev = rhs[i - 1];
                rhs[i] -= prev * w;
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                second[i + 1] = (rhs[i] - second[i + 2]) / diag[i];
            }
        }
        Ok(Self { values, second })
    }

    /// Largest knot parameter, `K`.
    pub fn span(&self) -> f64 {
        (self.values.len() - 1) as f64
    }

    fn segment(&self, t: f64) -> (usize, f64, f64) {
        let last = self.values.len() - 2;
        let k = (t.floor().max(0.0) as usize).min(last);
        let b = t - k as f64;
        (k, 1.0 - b, b)
    }

    pub fn eval(&self, t: f64) -> Vector3<f64> {
        let (k, a, b) = self.segment(t);
        let (m0, m1) = (self.second[k], self.second[k + 1]);
        m0 * (a * a * a / 6.0) + m1 * (b * b * b / 6.0)
            + (self.values[k] - m0 / 6.0) * a
            + (self.values[k + 1] - m1 / 6.0) * b
    }

    pub fn derivative(&self, t: f64) -> Vector3<f64> {
        let (k, a, b) = self.segment(t);
        let (m0, m1) = (self.second[k], self.second[k + 1]);
        -m0 * (a * a / 2.0) + m1 * (b * b / 2.0) - (self.values[k] - m0 / 6.0)
            + (self.values[k + 1] - m1 / 6.0)
    }

    pub fn second_derivative(&self, t: f64) -> Vector3<f64> {
        let (k, a, b) = self.segment(t);
        self.second[k] * a + self.second[k + 1] * b
    }
}

/// Closed-loop positions: the first center is appended after the last, a
/// natural spline is fitted over knots `0..=K`, and `n_samples` parameters
/// are taken uniformly on `[0, K]`.
pub fn spline_positions(sorted_centers: &[Vector3<f64>], n_samples: usize) -> Result<Vec<Vector3<f64>>> {
    if n_samples < 2 {
        return Err(Error::input(format!("need at least 2 samples, got {n_samples}")));
    }
    let spline = closed_spline(sorted_centers)?;
    Ok(sample_times(sorted_centers.len(), n_samples)
        .into_iter()
        .map(|t| spline.eval(t))
        .collect())
}

fn closed_spline(centers: &[Vector3<f64>]) -> Result<CubicSpline> {
    if centers.len() < 2 {
        return Err(Error::input("a closed trajectory needs at least 2 knots"));
    }
    let mut knots = centers.to_vec();
    knots.push(centers[0]);
    CubicSpline::natural(knots)
}

fn sample_times(k: usize, n: usize) -> Vec<f64> {
    let span = k as f64;
    (0..n).map(|j| span * j as f64 / (n - 1) as f64).collect()
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(qa: &UnitQuaternion<f64>, qb: &UnitQuaternion<f64>, alpha: f64) -> UnitQuaternion<f64> {
    let a = qa.quaternion();
    let mut b = *qb.quaternion();
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let theta = dot.min(1.0).acos();
    let q: Quaternion<f64> = if theta < SLERP_SMALL_ANGLE {
        a * (1.0 - alpha) + b * alpha
    } else {
        let s = theta.sin();
        a * (((1.0 - alpha) * theta).sin() / s) + b * ((alpha * theta).sin() / s)
    };
    UnitQuaternion::new_normalize(q)
}

/// Pose along the closed loop through azimuth-sorted cameras.
#[derive(Debug, Clone)]
pub struct LoopInterpolator {
    sorted: Vec<CameraPose>,
    positions: CubicSpline,
}

impl LoopInterpolator {
    pub fn new(poses: &[CameraPose]) -> Result<Self> {
        // A rig of identical poses has no azimuth order to recover; the loop
        // is then the constant pose.
        let degenerate = poses.len() >= 2 && poses.iter().all(|p| p == &poses[0]);
        let sorted = if degenerate {
            poses.to_vec()
        } else {
            sort_by_azimuth(poses)?
        };
        let centers: Vec<_> = sorted.iter().map(CameraPose::center).collect();
        let positions = closed_spline(&centers)?;
        Ok(Self { sorted, positions })
    }

    pub fn sorted_poses(&self) -> &[CameraPose] {
        &self.sorted
    }

    /// Loop length `K` (number of knots before closure).
    pub fn span(&self) -> f64 {
        self.sorted.len() as f64
    }

    pub fn pose_at(&self, t: f64) -> CameraPose {
        let k_count = self.sorted.len();
        let t = t.clamp(0.0, k_count as f64);
        let k = (t.floor() as usize).min(k_count - 1);
        let alpha = t - k as f64;
        let qa = &self.sorted[k].rotation;
        let qb = &self.sorted[(k + 1) % k_count].rotation;
        let rotation = slerp(qa, qb, alpha);
        let center = self.positions.eval(t);
        let translation = -(rotation.to_rotation_matrix().into_inner() * center);
        let nearest = (t.round() as usize) % k_count;
        self.sorted[nearest].with_extrinsic(rotation, translation)
    }
}

/// Sample `n_samples` poses uniformly along the closed camera loop.
pub fn interpolate_trajectory(poses: &[CameraPose], n_samples: usize) -> Result<Trajectory> {
    if n_samples < 2 {
        return Err(Error::input(format!("need at least 2 samples, got {n_samples}")));
    }
    let interp = LoopInterpolator::new(poses)?;
    let knot_times = sample_times(poses.len(), n_samples);
    Ok(Trajectory {
        poses: knot_times.iter().map(|&t| interp.pose_at(t)).collect(),
        knot_times,
    })
}
