use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::Gaussian4D;
use super::loss::rot_loss_from_offsets;
use crate::container::ArrayContainer;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Outputs per Gaussian: mean (3), quaternion (4), log-scale (3).
pub const OFFSET_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Frequencies in the position encoding.
    pub pos_freqs: usize,
    /// Frequencies in the time encoding.
    pub time_freqs: usize,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            pos_freqs: 4,
            time_freqs: 4,
        }
    }
}

impl DeformConfig {
    fn pos_dim(&self) -> usize {
        3 * (1 + 2 * self.pos_freqs)
    }

    fn input_dim(&self) -> usize {
        self.pos_dim() + 1 + 2 * self.time_freqs
    }
}

/// Per-timestamp offsets for one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeformOffset {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
}

impl DeformOffset {
    fn from_row(r: &[f64]) -> Self {
        Self {
            mean: [r[0], r[1], r[2]],
            rotation: [r[3], r[4], r[5], r[6]],
            log_scale: [r[7], r[8], r[9]],
        }
    }

    fn to_row(self) -> [f64; OFFSET_DIM] {
        let mut r = [0.0; OFFSET_DIM];
        r[0..3].copy_from_slice(&self.mean);
        r[3..7].copy_from_slice(&self.rotation);
        r[7..10].copy_from_slice(&self.log_scale);
        r
    }

    /// Canonical Gaussian moved by these offsets. The quaternion stays
    /// unnormalised; covariance construction normalises it.
    pub fn apply(&self, g: &Gaussian4D) -> Gaussian4D {
        let mut out = *g;
        for a in 0..3 {
            out.mean[a] += self.mean[a];
            out.log_scale[a] += self.log_scale[a];
        }
        for a in 0..4 {
            out.rotation[a] += self.rotation[a];
        }
        out
    }
}

/// Intermediate values kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct DeformCache {
    means: Vec<[f64; 3]>,
    /// Inputs to each layer, the first being the encoded features.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct DeformGrad {
    pub params: Vec<f64>,
    pub means: Vec<[f64; 3]>,
}

/// MLP from encoded `(mean, t / f)` to additive offsets. The last layer
/// starts at zero, so a fresh field is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub config: DeformConfig,
    pub n_frames: usize,
    pub params: ParamStore<f64>,
    layers: Vec<(ParamId, ParamId)>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `[x, sin(2^k pi x), cos(2^k pi x)]` for `k < freqs`.
fn encode(x: f64, freqs: usize, out: &mut Vec<f64>) {
    out.push(x);
    for k in 0..freqs {
        let w = std::f64::consts::PI * (1u64 << k) as f64;
        out.push((w * x).sin());
        out.push((w * x).cos());
    }
}

fn encode_grad(x: f64, freqs: usize, g: &[f64]) -> f64 {
    let mut d = g[0];
    for k in 0..freqs {
        let w = std::f64::consts::PI * (1u64 << k) as f64;
        d += g[1 + 2 * k] * w * (w * x).cos() - g[2 + 2 * k] * w * (w * x).sin();
    }
    d
}

impl DeformationField {
    /// Zero-valued field with the layout for `config`.
    pub fn zeros(config: DeformConfig, n_frames: usize) -> Result<Self> {
        if config.hidden == 0 || config.layers == 0 {
            return Err(Error::input("deformation network needs a hidden layer of nonzero width"));
        }
        if n_frames == 0 {
            return Err(Error::input("deformation field needs at least one frame"));
        }
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut d_in = config.input_dim();
        for l in 0..=config.layers {
            let d_out = if l == config.layers { OFFSET_DIM } else { config.hidden };
            let name = if l == config.layers { "deform.out".to_string() } else { format!("deform.fc{}", l + 1) };
            let w = params.add(format!("{name}.weight"), &[d_out, d_in]);
            let b = params.add(format!("{name}.bias"), &[d_out]);
            layers.push((w, b));
            d_in = d_out;
        }
        Ok(Self {
            config,
            n_frames,
            params,
            layers,
        })
    }

    /// Hidden layers uniform in `±1/sqrt(fan_in)`, output layer zero.
    pub fn new(config: DeformConfig, n_frames: usize, seed: u64) -> Result<Self> {
        let mut field = Self::zeros(config, n_frames)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(w, b) in &field.layers[..config.layers] {
            let fan_in = field.params.entry(w).shape[1] as f64;
            let bound = 1.0 / fan_in.sqrt();
            for id in [w, b] {
                for v in field.params.get_mut(id) {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(field)
    }

    /// Output-layer bias, i.e. the offset the field adds when its last
    /// weight matrix is zero.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let (_, b) = self.layers[self.config.layers];
        self.params.get_mut(b)
    }

    fn time_value(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.n_frames {
            return Err(Error::input(format!("timestamp {t} outside 1..={}", self.n_frames)));
        }
        Ok(t as f64 / self.n_frames as f64)
    }

    fn features(&self, means: &[[f64; 3]], tau: f64) -> DMatrix<f64> {
        let cfg = &self.config;
        let mut row = Vec::with_capacity(cfg.input_dim());
        let mut time = Vec::new();
        encode(tau, cfg.time_freqs, &mut time);
        let mut x = DMatrix::zeros(means.len(), cfg.input_dim());
        for (i, m) in means.iter().enumerate() {
            row.clear();
            for &c in m {
                encode(c, cfg.pos_freqs, &mut row);
            }
            row.extend_from_slice(&time);
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        x
    }

    fn weight(&self, l: usize) -> DMatrix<f64> {
        let (w, _) = self.layers[l];
        let shape = &self.params.entry(w).shape;
        DMatrix::from_row_slice(shape[0], shape[1], self.params.get(w))
    }

    fn forward_impl(&self, means: &[[f64; 3]], t: usize) -> Result<(Vec<DeformOffset>, DeformCache)> {
        let tau = self.time_value(t)?;
        let mut h = self.features(means, tau);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.config.layers);
        for (l, &(_, b)) in self.layers.iter().enumerate() {
            let mut z = &h * self.weight(l).transpose();
            let bias = self.params.get(b);
            for (j, bj) in bias.iter().enumerate() {
                z.column_mut(j).add_scalar_mut(*bj);
            }
            inputs.push(h);
            if l < self.config.layers {
                h = z.map(silu);
                pre.push(z);
            } else {
                h = z;
            }
        }
        let offsets = (0..means.len())
            .map(|i| {
                let r: Vec<f64> = h.row(i).iter().cloned().collect();
                DeformOffset::from_row(&r)
            })
            .collect();
        Ok((
            offsets,
            DeformCache {
                means: means.to_vec(),
                inputs,
                pre,
            },
        ))
    }

    /// Offsets for every mean at 1-based timestamp `t`.
    pub fn offsets(&self, means: &[[f64; 3]], t: usize) -> Result<Vec<DeformOffset>> {
        Ok(self.forward_impl(means, t)?.0)
    }

    pub fn offsets_with_cache(&self, means: &[[f64; 3]], t: usize) -> Result<(Vec<DeformOffset>, DeformCache)> {
        self.forward_impl(means, t)
    }

    /// Gradients of `sum <d_offsets, offsets>` with respect to the network
    /// parameters and the canonical means fed through the encoding.
    pub fn backward(&self, cache: &DeformCache, d_offsets: &[DeformOffset]) -> Result<DeformGrad> {
        let n = cache.means.len();
        if d_offsets.len() != n {
            return Err(Error::input("offset gradient count does not match the cached forward"));
        }
        let mut dz = DMatrix::zeros(n, OFFSET_DIM);
        for (i, d) in d_offsets.iter().enumerate() {
            for (j, v) in d.to_row().iter().enumerate() {
                dz[(i, j)] = *v;
            }
        }
        let mut params = self.params.zeros_like();
        for l in (0..self.layers.len()).rev() {
            let (w, b) = self.layers[l];
            let dw = dz.transpose() * &cache.inputs[l];
            let e = self.params.entry(w);
            // dw is [out, in]; store row-major
            for r in 0..dw.nrows() {
                for c in 0..dw.ncols() {
                    params[e.offset + r * dw.ncols() + c] = dw[(r, c)];
                }
            }
            let eb = self.params.entry(b);
            for j in 0..dz.ncols() {
                params[eb.offset + j] = dz.column(j).sum();
            }
            let dh = &dz * self.weight(l);
            if l == 0 {
                dz = dh;
            } else {
                dz = dh.zip_map(&cache.pre[l - 1], |g, z| g * silu_grad(z));
            }
        }
        let f = self.config.pos_freqs;
        let per = 1 + 2 * f;
        let mut means = vec![[0.0; 3]; n];
        let mut g = vec![0.0; per];
        for (i, m) in cache.means.iter().enumerate() {
            for a in 0..3 {
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk = dz[(i, a * per + k)];
                }
                means[i][a] = encode_grad(m[a], f, &g);
            }
        }
        Ok(DeformGrad { params, means })
    }

    /// Rotation smoothness across `timestamps` and its gradients.
    pub fn rot_loss(&self, means: &[[f64; 3]], timestamps: &[usize]) -> Result<(f64, DeformGrad)> {
        let mut offsets = Vec::with_capacity(timestamps.len());
        let mut caches = Vec::with_capacity(timestamps.len());
        for &t in timestamps {
            let (o, c) = self.forward_impl(means, t)?;
            offsets.push(o.iter().map(|d| d.rotation).collect::<Vec<_>>());
            caches.push(c);
        }
        let (loss, grads) = rot_loss_from_offsets(&offsets)?;
        let mut total = DeformGrad {
            params: self.params.zeros_like(),
            means: vec![[0.0; 3]; means.len()],
        };
        for (cache, g) in caches.iter().zip(grads) {
            let d: Vec<DeformOffset> = g
                .into_iter()
                .map(|rotation| DeformOffset {
                    rotation,
                    ..Default::default()
                })
                .collect();
            let part = self.backward(cache, &d)?;
            total.params.iter_mut().zip(&part.params).for_each(|(a, b)| *a += b);
            for (a, b) in total.means.iter_mut().zip(&part.means) {
                for k in 0..3 {
                    a[k] += b[k];
                }
            }
        }
        Ok((loss, total))
    }

    /// Parameters plus layout metadata.
    pub fn to_container(&self) -> ArrayContainer {
        let mut c = self.params.to_container();
        c.meta = serde_json::json!({
            "kind": "deformation_field",
            "config": self.config,
            "n_frames": self.n_frames,
        });
        c
    }

    pub fn from_container(c: &ArrayContainer) -> Result<Self> {
        let config: DeformConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| Error::Format(format!("deformation config: {e}")))?;
        let n_frames = c.meta["n_frames"]
            .as_u64()
            .ok_or_else(|| Error::Format("deformation frame count missing".into()))? as usize;
        let mut field = Self::zeros(config, n_frames)?;
        field.params.load_container(c)?;
        Ok(field)
    }
}

/// Deformed copies of `gaussians` at 1-based timestamp `t`.
pub fn deform_gaussians(gaussians: &[Gaussian4D], field: &DeformationField, t: usize) -> Result<Vec<Gaussian4D>> {
    let means: Vec<[f64; 3]> = gaussians.iter().map(|g| g.mean).collect();
    let offsets = field.offsets(&means, t)?;
    Ok(gaussians.iter().zip(&offsets).map(|(g, o)| o.apply(g)).collect())
}
