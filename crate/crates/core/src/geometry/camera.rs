use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-9;

/// Pinhole camera with a world-to-camera extrinsic.
///
/// Camera frame: +x right, +y down, +z forward. A world point `p` maps to
/// `R p + t` in camera coordinates; pixel `(u, v)` has its center at
/// `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Rigid map `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.set_column(3, &self.translation);
        m
    }

    /// The 3x4 `[R | t]` flattened row-major (12 values).
    pub fn flatten(&self) -> [f64; 12] {
        let m = self.to_matrix();
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }
}

impl CameraPose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Quaternion<f64>,
        translation: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let norm = rotation.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::input(format!("camera quaternion norm {norm} is not 1")));
        }
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::input(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if width == 0 || height == 0 {
            return Err(Error::input("image size must be at least 1x1"));
        }
        if !translation.iter().all(|v| v.is_finite()) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::input("camera parameters must be finite"));
        }
        // already-unit input is kept bit-exact so camera files round trip
        let rotation = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(rotation)
        } else {
            UnitQuaternion::new_normalize(rotation)
        };
        Ok(Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with world +y as up.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::input("look_at eye and target coincide"));
        }
        let z = forward.normalize();
        let down = -Vector3::y();
        let x = down.cross(&z);
        if x.norm() < 1e-9 {
            return Err(Error::input("look_at direction is parallel to the up axis"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let c2w = Matrix3::from_columns(&[x, y, z]);
        let w2c = c2w.transpose();
        let q = UnitQuaternion::from_matrix(&w2c);
        Self::new(
            *q.quaternion(),
            -(w2c * eye),
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn extrinsic(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation_matrix(),
            translation: self.translation,
        }
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    /// Same intrinsics, new extrinsic.
    pub fn with_extrinsic(&self, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            ..self.clone()
        }
    }

    /// Intrinsics rescaled for an image `factor` times smaller.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
            ..self.clone()
        }
    }

    pub fn to_record(&self) -> CameraRecord {
        let q = self.rotation.quaternion();
        CameraRecord {
            quaternion: [q.w, q.i, q.j, q.k],
            translation: [self.translation.x, self.translation.y, self.translation.z],
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }
}

/// Transform mapping reference-camera coordinates to target-camera
/// coordinates: `target_extrinsic = relative ∘ reference_extrinsic`.
pub fn relative_pose(reference: &CameraPose, target: &CameraPose) -> RigidTransform {
    let r_ref = reference.rotation_matrix();
    let r_tgt = target.rotation_matrix();
    let rotation = r_tgt * r_ref.transpose();
    RigidTransform {
        rotation,
        translation: target.translation - rotation * reference.translation,
    }
}

/// One camera in the JSON camera file. The quaternion is stored w-first.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl TryFrom<CameraRecord> for CameraPose {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let [w, x, y, z] = r.quaternion;
        CameraPose::new(
            Quaternion::new(w, x, y, z),
            Vector3::from(r.translation),
            r.fx,
            r.fy,
            r.cx,
            r.cy,
            r.width,
            r.height,
        )
    }
}

pub fn write_cameras(path: &Path, cams: &[CameraPose]) -> Result<()> {
    let records: Vec<CameraRecord> = cams.iter().map(CameraPose::to_record).collect();
    let json = serde_json::to_string_pretty(&records).expect("camera records serialize");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    records.into_iter().map(CameraPose::try_from).collect()
}
