use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::ArrayContainer;
use crate::error::{Error, Result};
use crate::geometry::{read_cameras, write_cameras, CameraPose, DepthMap, LoopInterpolator};
use crate::imaging::{export_frames, import_frames, quantize, FrameFormat, Image};
use crate::splat::{render_gaussians, Gaussian4D, RasterConfig, Rendered};

pub const N_CAMERAS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub primitives: usize,
    pub clusters: usize,
    /// Peak cluster translation over the sequence, world units.
    pub translation: f64,
    /// Total cluster rotation over the sequence, degrees.
    pub rotation_deg: f64,
    pub camera_radius: f64,
    pub camera_height: f64,
    /// Focal length as a multiple of the image width.
    pub focal: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 8,
            primitives: 240,
            clusters: 3,
            translation: 0.12,
            rotation_deg: 20.0,
            camera_radius: 3.0,
            camera_height: 0.8,
            focal: 1.1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(8..=128).contains(&self.width) || !(8..=128).contains(&self.height) {
            return Err(Error::input("scene resolution must lie in 8..=128"));
        }
        if !(1..=16).contains(&self.frames) {
            return Err(Error::input("scene frame count must lie in 1..=16"));
        }
        if !(50..=500).contains(&self.primitives) {
            return Err(Error::input("scene needs 50..=500 primitives"));
        }
        if !(2..=5).contains(&self.clusters) {
            return Err(Error::input("scene needs 2..=5 clusters"));
        }
        if !(self.translation >= 0.0 && self.rotation_deg >= 0.0) {
            return Err(Error::input("motion amplitudes must be non-negative"));
        }
        if !(self.camera_radius > 1.5 && self.focal > 0.0) {
            return Err(Error::input("cameras must sit outside the content at positive focal length"));
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        self.translation == 0.0 && self.rotation_deg == 0.0
    }
}

/// Rigid motion of one cluster: a smooth translation path and a rotation
/// about a fixed axis through the cluster center.
#[derive(Debug, Clone, PartialEq)]
struct ClusterMotion {
    center: Vector3<f64>,
    direction: Vector3<f64>,
    phase: f64,
    axis: Vector3<f64>,
}

/// Ground-truth scene: six cameras and Gaussian clusters in rigid motion.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub cams: Vec<CameraPose>,
    pub gaussians: Vec<Gaussian4D>,
    /// Cluster index of each Gaussian.
    pub membership: Vec<usize>,
    motions: Vec<ClusterMotion>,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

impl SyntheticScene {
    pub fn new(config: SceneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = config.focal * config.width as f64;
        // the last camera's jitter may not undercut the first's, so the
        // unwrapped azimuth range stays at least 300 degrees
        let jitter = loop {
            let j: Vec<f64> = (0..N_CAMERAS).map(|_| rng.random_range(-10.0..10.0)).collect();
            if j[N_CAMERAS - 1] >= j[0] {
                break j;
            }
        };
        let cams = (0..N_CAMERAS)
            .map(|k| {
                let az = (60.0 * k as f64 + jitter[k]).to_radians();
                let r = config.camera_radius * rng.random_range(0.9..1.1);
                let h = config.camera_height * rng.random_range(0.9..1.1);
                let eye = Vector3::new(r * az.cos(), -h, r * az.sin());
                CameraPose::look_at(eye, Vector3::zeros(), fx, fx, config.width, config.height)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut motions = Vec::with_capacity(config.clusters);
        for c in 0..config.clusters {
            let az = std::f64::consts::TAU * (c as f64 + rng.random_range(0.0..0.5)) / config.clusters as f64;
            let r = rng.random_range(0.25..0.45);
            motions.push(ClusterMotion {
                center: Vector3::new(r * az.cos(), rng.random_range(-0.2..0.2), r * az.sin()),
                direction: unit_vector(&mut rng),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                axis: unit_vector(&mut rng),
            });
        }
        let mut gaussians = Vec::with_capacity(config.primitives);
        let mut membership = Vec::with_capacity(config.primitives);
        let palette: Vec<[f64; 3]> = (0..config.clusters)
            .map(|_| [rng.random_range(0.2..0.95), rng.random_range(0.2..0.95), rng.random_range(0.2..0.95)])
            .collect();
        for i in 0..config.primitives {
            let c = i % config.clusters;
            let offset = unit_vector(&mut rng) * 0.22 * rng.random::<f64>().cbrt();
            let m = motions[c].center + offset;
            let base = palette[c];
            let color = base.map(|v| (v + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0));
            let q = UnitQuaternion::from_axis_angle(
                &nalgebra::Unit::new_normalize(unit_vector(&mut rng)),
                rng.random_range(0.0..std::f64::consts::PI),
            );
            let qq = q.quaternion();
            gaussians.push(Gaussian4D {
                mean: [m.x, m.y, m.z],
                rotation: [qq.w, qq.i, qq.j, qq.k],
                log_scale: [
                    rng.random_range(0.025f64..0.07).ln(),
                    rng.random_range(0.025f64..0.07).ln(),
                    rng.random_range(0.025f64..0.07).ln(),
                ],
                opacity_logit: crate::splat::logit(rng.random_range(0.75..0.97)),
                color,
            });
            membership.push(c);
        }
        Ok(Self {
            config,
            cams,
            gaussians,
            membership,
            motions,
        })
    }

    /// Normalised time of 1-based timestamp `t`, in `[0, 1]`.
    fn phase(&self, t: usize) -> f64 {
        if self.config.frames <= 1 {
            0.0
        } else {
            (t - 1) as f64 / (self.config.frames - 1) as f64
        }
    }

    /// Ground-truth Gaussians at 1-based timestamp `t`.
    pub fn gaussians_at(&self, t: usize) -> Result<Vec<Gaussian4D>> {
        if t == 0 || t > self.config.frames {
            return Err(Error::input(format!("timestamp {t} outside 1..={}", self.config.frames)));
        }
        let s = self.phase(t);
        let rigid: Vec<(UnitQuaternion<f64>, Vector3<f64>, Vector3<f64>)> = self
            .motions
            .iter()
            .map(|m| {
                let shift = m.direction
                    * self.config.translation
                    * ((std::f64::consts::PI * s + m.phase).sin() - m.phase.sin());
                let angle = self.config.rotation_deg.to_radians() * s;
                let rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(m.axis), angle);
                (rot, m.center, shift)
            })
            .collect();
        Ok(self
            .gaussians
            .iter()
            .zip(&self.membership)
            .map(|(g, &c)| {
                let (rot, center, shift) = &rigid[c];
                let p = rot * (Vector3::from(g.mean) - center) + center + shift;
                let q0 = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    g.rotation[0],
                    g.rotation[1],
                    g.rotation[2],
                    g.rotation[3],
                ));
                let q = (rot * q0).into_inner();
                Gaussian4D {
                    mean: [p.x, p.y, p.z],
                    rotation: [q.w, q.i, q.j, q.k],
                    ..*g
                }
            })
            .collect())
    }

    /// Ground-truth render from any camera at 1-based timestamp `t`.
    pub fn render(&self, cam: &CameraPose, t: usize) -> Result<Rendered> {
        Ok(render_gaussians(&self.gaussians_at(t)?, cam, &RasterConfig::default()))
    }

    /// Closed camera loop through the rig.
    pub fn camera_loop(&self) -> Result<LoopInterpolator> {
        LoopInterpolator::new(&self.cams)
    }

    /// Frames and depth maps for every rig camera.
    pub fn bundle(&self, seed: u64, config_hash: &str) -> Result<SceneBundle> {
        let mut frames = Vec::with_capacity(self.cams.len());
        let mut depths = Vec::with_capacity(self.cams.len());
        for cam in &self.cams {
            let mut fv = Vec::with_capacity(self.config.frames);
            let mut dv = Vec::with_capacity(self.config.frames);
            for t in 1..=self.config.frames {
                let r = self.render(cam, t)?;
                fv.push(r.image());
                dv.push(r.depth_map());
            }
            frames.push(fv);
            depths.push(dv);
        }
        let checksums = frames.iter().map(|v| frame_checksum(v)).collect();
        Ok(SceneBundle {
            frames,
            depths,
            cams: self.cams.clone(),
            meta: BundleMeta {
                seed,
                config_hash: config_hash.to_string(),
                checksums,
            },
        })
    }
}

/// SHA-256 over the 8-bit encoding of a frame sequence.
pub fn frame_checksum(frames: &[Image]) -> String {
    let mut h = Sha256::new();
    for f in frames {
        h.update((f.width as u64).to_le_bytes());
        h.update((f.height as u64).to_le_bytes());
        h.update(f.to_rgb8());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    pub config_hash: String,
    /// One checksum per view.
    pub checksums: Vec<String>,
}

/// Multi-view ground-truth video with depth and cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub frames: Vec<Vec<Image>>,
    pub depths: Vec<Vec<DepthMap>>,
    pub cams: Vec<CameraPose>,
    pub meta: BundleMeta,
}

impl SceneBundle {
    pub fn n_frames(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn training_data(&self) -> crate::splat::TrainingData<'_> {
        crate::splat::TrainingData {
            frames: &self.frames,
            depths: &self.depths,
            cams: &self.cams,
        }
    }

    /// Layout: `view_<v>/frame_<t>.png`, `depths.bin` (+ manifest),
    /// `cameras.json`, `bundle.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (v, frames) in self.frames.iter().enumerate() {
            export_frames(frames, &dir.join(format!("view_{v}")), FrameFormat::Png)?;
        }
        let mut c = ArrayContainer::default();
        for (v, dv) in self.depths.iter().enumerate() {
            for (t, d) in dv.iter().enumerate() {
                let vals = d.values.iter().zip(&d.valid).map(|(z, ok)| if *ok { *z } else { 0.0 }).collect();
                c.push(format!("depth.{v}.{t}"), vec![d.height, d.width], vals);
            }
        }
        c.meta = serde_json::json!({ "kind": "depths", "views": self.depths.len(), "frames": self.n_frames() });
        c.save(&dir.join("depths.bin"))?;
        write_cameras(&dir.join("cameras.json"), &self.cams)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        let path = dir.join("bundle.json");
        std::fs::write(&path, meta + "\n").map_err(|e| Error::io(path, e))
    }

    /// Frames come back 8-bit quantised.
    pub fn load(dir: &Path) -> Result<Self> {
        let cams = read_cameras(&dir.join("cameras.json"))?;
        let path = dir.join("bundle.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| Error::Format(format!("bundle.json: {e}")))?;
        let frames = (0..cams.len())
            .map(|v| import_frames(&dir.join(format!("view_{v}"))))
            .collect::<Result<Vec<_>>>()?;
        let f = frames.first().map_or(0, Vec::len);
        let c = ArrayContainer::load(&dir.join("depths.bin"))?;
        let mut depths = Vec::with_capacity(cams.len());
        for v in 0..cams.len() {
            let mut dv = Vec::with_capacity(f);
            for t in 0..f {
                let a = c.require(&format!("depth.{v}.{t}"))?;
                if a.shape.len() != 2 {
                    return Err(Error::Format(format!("depth.{v}.{t} is not 2-d")));
                }
                let valid = a.data.iter().map(|z| *z > 0.0).collect();
                dv.push(DepthMap::new(a.shape[1], a.shape[0], a.data.clone(), valid)?);
            }
            depths.push(dv);
        }
        Ok(Self { frames, depths, cams, meta })
    }
}

/// Quantise to 8 bits and back, as a bundle round trip would.
pub fn quantized(img: &Image) -> Image {
    Image {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|v| quantize(*v) as f64 / 255.0).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rig_spans_the_circle() {
        for seed in 0..20 {
            let s = SyntheticScene::new(SceneConfig::default(), seed).unwrap();
            let az: Vec<f64> = s.cams.iter().map(|c| c.center().z.atan2(c.center().x).to_degrees()).collect();
            let rel: Vec<f64> = az.iter().map(|a| (a - az[0]).rem_euclid(360.0)).collect();
            assert!(rel.windows(2).all(|w| w[1] > w[0]), "seed {seed}: cameras out of order");
            assert!(rel[5] >= 300.0, "seed {seed}: span {}", rel[5]);
        }
    }

    #[test]
    fn first_timestamp_is_the_canonical_pose() {
        let s = SyntheticScene::new(SceneConfig::default(), 4).unwrap();
        let g1 = s.gaussians_at(1).unwrap();
        for (a, b) in g1.iter().zip(&s.gaussians) {
            for k in 0..3 {
                assert!((a.mean[k] - b.mean[k]).abs() < 1e-12);
            }
        }
        assert_ne!(s.gaussians_at(8).unwrap()[0].mean, g1[0].mean);
        assert!(s.gaussians_at(0).is_err() && s.gaussians_at(9).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SceneConfig { primitives: 10, ..Default::default() },
            SceneConfig { clusters: 6, ..Default::default() },
            SceneConfig { width: 256, ..Default::default() },
            SceneConfig { frames: 0, ..Default::default() },
        ] {
            assert!(SyntheticScene::new(cfg, 1).is_err());
        }
    }
}
