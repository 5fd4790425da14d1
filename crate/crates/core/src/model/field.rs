use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::{LatentGrid, LatentShape};
use super::layers::{gelu, gelu_grad, linear, linear_backward, positional_encoding, time_features};
use crate::attention::{attention_backward, attention_forward, build_mask, collapse_position, AttentionProbs};
use crate::attention::{GridIndex, TVMask, ViewMask};
use crate::container::ArrayContainer;
use crate::error::{Error, Result};
use crate::geometry::{relative_pose, CameraPose};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

/// Width of the sinusoidal flow-time features.
pub const TIME_FEATURES: usize = 32;
const POSE_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub patch: usize,
    pub channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            blocks: 2,
            heads: 2,
            patch: 1,
            channels: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.patch == 0 || self.channels == 0 {
            return Err(Error::input("model dimensions must be positive"));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::input(format!(
                "model width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    fn token_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

/// Condition latents (view 0 holds the reference video) and each view's
/// camera relative to the reference, flattened row-major from `[R | t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub condition: LatentGrid,
    pub cameras: Vec<[f64; 12]>,
}

impl Conditioning {
    pub fn new(condition: LatentGrid, cameras: Vec<[f64; 12]>) -> Result<Self> {
        if cameras.len() != condition.shape.n_views {
            return Err(Error::input(format!(
                "{} cameras for {} views",
                cameras.len(),
                condition.shape.n_views
            )));
        }
        Ok(Self { condition, cameras })
    }

    /// Cameras given as absolute poses; the first one is the reference.
    pub fn from_poses(condition: LatentGrid, poses: &[CameraPose]) -> Result<Self> {
        let reference = poses.first().ok_or_else(|| Error::input("no camera poses given"))?;
        let cams = poses.iter().map(|p| relative_pose(reference, p).flatten()).collect();
        Self::new(condition, cams)
    }
}

/// Per-view camera vectors of width `dim`, broadcast over a view's tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraEmbedding<T = f64> {
    pub dim: usize,
    pub vectors: Vec<T>,
}

impl<T: Real> CameraEmbedding<T> {
    pub fn zeros(n_views: usize, dim: usize) -> Self {
        Self {
            dim,
            vectors: vec![T::zero(); n_views * dim],
        }
    }

    pub fn n_views(&self) -> usize {
        self.vectors.len() / self.dim.max(1)
    }
}

/// Linear map of a flattened relative pose; `weight` is `dim × 12`.
pub fn encode_camera<T: Real>(pose_rel: &[f64; 12], weight: &[T]) -> Vec<T> {
    let dim = weight.len() / POSE_DIM;
    let x: Vec<T> = pose_rel.iter().map(|&v| T::lit(v)).collect();
    linear(&x, 1, POSE_DIM, weight, None, dim)
}

#[derive(Debug, Clone)]
struct AttnIds {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Debug, Clone)]
struct BlockIds {
    self_attn: AttnIds,
    camera: ParamId,
    fused: AttnIds,
    proj: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    embed_w: ParamId,
    embed_b: ParamId,
    time_w: ParamId,
    time_b: ParamId,
    blocks: Vec<BlockIds>,
    head_w: ParamId,
    head_b: ParamId,
}

struct Ctx {
    n_views: usize,
    n_time: usize,
    n_spatial: usize,
    n: usize,
    view_mask: ViewMask,
    tv_mask: TVMask,
}

struct AttnCache<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: AttentionProbs<T>,
    mixed: Vec<T>,
}

struct BlockCache<T> {
    x: Vec<T>,
    self_attn: AttnCache<T>,
    x2: Vec<T>,
    fused: AttnCache<T>,
    fused_out: Vec<T>,
    x3: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
}

struct ForwardCache<T> {
    shape: LatentShape,
    layout: Vec<TokenSource>,
    raw: Vec<T>,
    time_feat: Vec<T>,
    cameras: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    target_rows: Vec<usize>,
    head_in: Vec<T>,
}

/// Activations recorded by [`VelocityField::forward_with_tape`].
///
/// `Tape::default()` is empty; passing it to `backward` is a state error.
pub struct Tape<T> {
    cache: Option<ForwardCache<T>>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self { cache: None }
    }
}

impl<T> Tape<T> {
    pub fn is_empty(&self) -> bool {
        self.cache.is_none()
    }
}

/// Reverse-mode result: gradients for every parameter (same layout as the
/// parameter store) and for the noisy target latent.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
    pub input_shape: LatentShape,
}

impl<T: Real> Gradients<T> {
    pub fn input_latent(&self) -> LatentGrid {
        LatentGrid {
            shape: self.input_shape,
            values: self.input.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum TokenSource {
    Target(usize),
    Condition(usize),
}

fn token_layout(shape: LatentShape, patch: usize) -> Vec<TokenSource> {
    let (rows, cols) = (shape.height / patch, shape.width / patch);
    let idx = |v: usize, t: usize, c: usize, y: usize, x: usize| {
        (((v * shape.frames + t) * shape.channels + c) * shape.height + y) * shape.width + x
    };
    let mut out = Vec::with_capacity(2 * shape.len());
    for v in 0..shape.n_views {
        for t in 0..2 * shape.frames {
            for pr in 0..rows {
                for pc in 0..cols {
                    for c in 0..shape.channels {
                        for dy in 0..patch {
                            for dx in 0..patch {
                                let (y, x) = (pr * patch + dy, pc * patch + dx);
                                out.push(if t < shape.frames {
                                    TokenSource::Target(idx(v, t, c, y, x))
                                } else {
                                    TokenSource::Condition(idx(v, t - shape.frames, c, y, x))
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Split a buffer into the disjoint gradient slices of two parameters.
fn two_mut<'a, T>(g: &'a mut [T], a: (usize, usize), b: (usize, usize)) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.0 + a.1 <= b.0, "parameter slices must be ordered and disjoint");
    let (lo, hi) = g.split_at_mut(b.0);
    (&mut lo[a.0..a.0 + a.1], &mut hi[..b.1])
}

/// The learnable velocity field `v(z, tau, cond)`.
#[derive(Debug, Clone)]
pub struct VelocityField<T = f64> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    ids: Ids,
}

impl<T: Real> VelocityField<T> {
    fn layout(config: &ModelConfig) -> (ParamStore<T>, Ids) {
        let d = config.dim;
        let td = config.token_dim();
        let mut p = ParamStore::new();
        let embed_w = p.add("patch_embed.weight", &[d, td]);
        let embed_b = p.add("patch_embed.bias", &[d]);
        let time_w = p.add("time_embed.weight", &[d, TIME_FEATURES]);
        let time_b = p.add("time_embed.bias", &[d]);
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let attn = |p: &mut ParamStore<T>, prefix: &str| AttnIds {
                q: p.add(format!("blocks.{b}.{prefix}.wq"), &[d, d]),
                k: p.add(format!("blocks.{b}.{prefix}.wk"), &[d, d]),
                v: p.add(format!("blocks.{b}.{prefix}.wv"), &[d, d]),
                o: p.add(format!("blocks.{b}.{prefix}.wo"), &[d, d]),
            };
            let self_attn = attn(&mut p, "self_attn");
            let camera = p.add(format!("blocks.{b}.camera_encoder.weight"), &[d, POSE_DIM]);
            let fused = attn(&mut p, "fused_attn");
            let proj = p.add(format!("blocks.{b}.fused_proj.weight"), &[d, d]);
            let fc1_w = p.add(format!("blocks.{b}.ffn.fc1.weight"), &[2 * d, d]);
            let fc1_b = p.add(format!("blocks.{b}.ffn.fc1.bias"), &[2 * d]);
            let fc2_w = p.add(format!("blocks.{b}.ffn.fc2.weight"), &[d, 2 * d]);
            let fc2_b = p.add(format!("blocks.{b}.ffn.fc2.bias"), &[d]);
            blocks.push(BlockIds {
                self_attn,
                camera,
                fused,
                proj,
                fc1_w,
                fc1_b,
                fc2_w,
                fc2_b,
            });
        }
        let head_w = p.add("head.weight", &[td, d]);
        let head_b = p.add("head.bias", &[td]);
        (
            p,
            Ids {
                embed_w,
                embed_b,
                time_w,
                time_b,
                blocks,
                head_w,
                head_b,
            },
        )
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (params, ids) = Self::layout(&config);
        Ok(Self { config, params, ids })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, camera encoders and
    /// fused projectors zero, fused attention copied from self-attention.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut Self, id: ParamId| {
            let fan_in = *m.params.entry(id).shape.last().expect("2-d weight");
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in m.params.get_mut(id) {
                *w = T::lit(rng.random_range(-bound..bound));
            }
        };
        let ids = m.ids.clone();
        fill(&mut m, ids.embed_w);
        fill(&mut m, ids.time_w);
        for b in &ids.blocks {
            for (src, dst) in [
                (b.self_attn.q, b.fused.q),
                (b.self_attn.k, b.fused.k),
                (b.self_attn.v, b.fused.v),
                (b.self_attn.o, b.fused.o),
            ] {
                fill(&mut m, src);
                let copy = m.params.get(src).to_vec();
                m.params.get_mut(dst).copy_from_slice(&copy);
            }
            fill(&mut m, b.fc1_w);
            fill(&mut m, b.fc2_w);
        }
        fill(&mut m, ids.head_w);
        Ok(m)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> VelocityField<U> {
        VelocityField {
            config: self.config,
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Camera embedding of block `block` for the given relative poses.
    pub fn camera_embedding(&self, block: usize, cameras: &[[f64; 12]]) -> CameraEmbedding<T> {
        let w = self.params.get(self.ids.blocks[block].camera);
        let mut vectors = Vec::with_capacity(cameras.len() * self.config.dim);
        for c in cameras {
            vectors.extend(encode_camera(c, w));
        }
        CameraEmbedding {
            dim: self.config.dim,
            vectors,
        }
    }

    fn check_inputs(&self, z: &LatentGrid, tau: f64, cond: &Conditioning) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::input(format!("flow time {tau} is outside [0, 1]")));
        }
        let s = z.shape;
        if cond.condition.shape != s {
            return Err(Error::input(format!(
                "noisy latent {:?} and condition {:?} shapes differ",
                s, cond.condition.shape
            )));
        }
        if cond.cameras.len() != s.n_views {
            return Err(Error::input(format!("{} cameras for {} views", cond.cameras.len(), s.n_views)));
        }
        if s.channels != self.config.channels {
            return Err(Error::input(format!(
                "model expects {} channels, latent has {}",
                self.config.channels, s.channels
            )));
        }
        let p = self.config.patch;
        if s.height % p != 0 || s.width % p != 0 || s.is_empty() {
            return Err(Error::input(format!(
                "{}x{} latent is not divisible into {p}x{p} patches",
                s.height, s.width
            )));
        }
        Ok(())
    }

    fn context(&self, shape: LatentShape) -> Result<Ctx> {
        let p = self.config.patch;
        let n_time = 2 * shape.frames;
        let n_spatial = (shape.height / p) * (shape.width / p);
        Ok(Ctx {
            n_views: shape.n_views,
            n_time,
            n_spatial,
            n: shape.n_views * n_time * n_spatial,
            view_mask: ViewMask {
                n_views: shape.n_views,
                n_time,
            },
            tv_mask: build_mask(shape.n_views, shape.frames)?,
        })
    }

    fn attn_forward(&self, ids: &AttnIds, x: &[T], n: usize, mask: &dyn crate::attention::SlotMask, s: usize) -> (AttnCache<T>, Vec<T>) {
        let d = self.config.dim;
        let p = &self.params;
        let q = linear(x, n, d, p.get(ids.q), None, d);
        let k = linear(x, n, d, p.get(ids.k), None, d);
        let v = linear(x, n, d, p.get(ids.v), None, d);
        let (mixed, probs) =
            attention_forward(&q, &k, &v, n, d, self.config.heads, mask, s).expect("shapes checked by caller");
        let out = linear(&mixed, n, d, p.get(ids.o), None, d);
        (AttnCache { q, k, v, probs, mixed }, out)
    }

    fn attn_backward(&self, ids: &AttnIds, x: &[T], c: &AttnCache<T>, dy: &[T], n: usize, grads: &mut [T]) -> Vec<T> {
        let d = self.config.dim;
        let p = &self.params;
        let off = |id: ParamId| {
            let e = p.entry(id);
            e.offset..e.offset + e.len
        };
        let dmixed = linear_backward(&c.mixed, dy, n, d, d, p.get(ids.o), &mut grads[off(ids.o)], None);
        let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, d, &c.probs, &dmixed);
        let mut dx = linear_backward(x, &dq, n, d, d, p.get(ids.q), &mut grads[off(ids.q)], None);
        for (id, g) in [(ids.k, &dk), (ids.v, &dv)] {
            let part = linear_backward(x, g, n, d, d, p.get(id), &mut grads[off(id)], None);
            for (a, b) in dx.iter_mut().zip(part) {
                *a += b;
            }
        }
        dx
    }

    fn run_block(&self, b: usize, x: Vec<T>, emb: &[T], ctx: &Ctx) -> (Vec<T>, BlockCache<T>) {
        let d = self.config.dim;
        let ids = &self.ids.blocks[b];
        let p = &self.params;
        let n = ctx.n;
        let (self_attn, sa) = self.attn_forward(&ids.self_attn, &x, n, &ctx.view_mask, ctx.n_spatial);
        let per_view = ctx.n_time * ctx.n_spatial;
        let mut x2: Vec<T> = x.iter().zip(&sa).map(|(a, b)| *a + *b).collect();
        for (i, row) in x2.chunks_mut(d).enumerate() {
            let cv = &emb[(i / per_view) * d..(i / per_view + 1) * d];
            for (r, c) in row.iter_mut().zip(cv) {
                *r += *c;
            }
        }
        let (fused, fa) = self.attn_forward(&ids.fused, &x2, n, &ctx.tv_mask, ctx.n_spatial);
        let proj = linear(&fa, n, d, p.get(ids.proj), None, d);
        let x3: Vec<T> = x2.iter().zip(&proj).map(|(a, b)| *a + *b).collect();
        let hidden_pre = linear(&x3, n, d, p.get(ids.fc1_w), Some(p.get(ids.fc1_b)), 2 * d);
        let hidden: Vec<T> = hidden_pre.iter().map(|&h| gelu(h)).collect();
        let ffn = linear(&hidden, n, 2 * d, p.get(ids.fc2_w), Some(p.get(ids.fc2_b)), d);
        let x4: Vec<T> = x3.iter().zip(&ffn).map(|(a, b)| *a + *b).collect();
        let cache = BlockCache {
            x,
            self_attn,
            x2,
            fused,
            fused_out: fa,
            x3,
            hidden_pre,
            hidden,
        };
        (x4, cache)
    }

    fn block_backward(&self, b: usize, c: &BlockCache<T>, cameras: &[T], dx4: Vec<T>, ctx: &Ctx, grads: &mut [T]) -> Vec<T> {
        let d = self.config.dim;
        let n = ctx.n;
        let ids = &self.ids.blocks[b];
        let p = &self.params;
        let span = |id: ParamId| {
            let e = p.entry(id);
            (e.offset, e.len)
        };
        // feed-forward
        let dhidden = {
            let (dw, db) = two_mut(grads, span(ids.fc2_w), span(ids.fc2_b));
            linear_backward(&c.hidden, &dx4, n, 2 * d, d, p.get(ids.fc2_w), dw, Some(db))
        };
        let dpre: Vec<T> = dhidden.iter().zip(&c.hidden_pre).map(|(g, &h)| *g * gelu_grad(h)).collect();
        let mut dx3 = {
            let (dw, db) = two_mut(grads, span(ids.fc1_w), span(ids.fc1_b));
            linear_backward(&c.x3, &dpre, n, d, 2 * d, p.get(ids.fc1_w), dw, Some(db))
        };
        for (a, b) in dx3.iter_mut().zip(&dx4) {
            *a += *b;
        }
        // fused attention through the projector
        let (po, pl) = span(ids.proj);
        let dfa = linear_backward(&c.fused_out, &dx3, n, d, d, p.get(ids.proj), &mut grads[po..po + pl], None);
        let dfx = self.attn_backward(&ids.fused, &c.x2, &c.fused, &dfa, n, grads);
        let dx2: Vec<T> = dx3.iter().zip(&dfx).map(|(a, b)| *a + *b).collect();
        // camera encoder
        let per_view = ctx.n_time * ctx.n_spatial;
        let (co, cl) = span(ids.camera);
        let dcam = &mut grads[co..co + cl];
        for v in 0..ctx.n_views {
            let cam = &cameras[v * POSE_DIM..(v + 1) * POSE_DIM];
            let mut sum = vec![T::zero(); d];
            for row in dx2[v * per_view * d..(v + 1) * per_view * d].chunks(d) {
                for (s, g) in sum.iter_mut().zip(row) {
                    *s += *g;
                }
            }
            for o in 0..d {
                for i in 0..POSE_DIM {
                    dcam[o * POSE_DIM + i] += sum[o] * cam[i];
                }
            }
        }
        // per-view self-attention
        let dsx = self.attn_backward(&ids.self_attn, &c.x, &c.self_attn, &dx2, n, grads);
        dx2.iter().zip(&dsx).map(|(a, b)| *a + *b).collect()
    }

    /// One transformer block on embedded tokens of width `dim`.
    pub fn block_forward(
        &self,
        block: usize,
        x: &super::latent::TokenSequence<T>,
        cameras: &CameraEmbedding<T>,
        mask: &TVMask,
    ) -> Result<super::latent::TokenSequence<T>> {
        if block >= self.config.blocks {
            return Err(Error::input(format!("block {block} out of range {}", self.config.blocks)));
        }
        if x.dim != self.config.dim || cameras.dim != self.config.dim || cameras.n_views() != x.n_views {
            return Err(Error::input("token width or camera count does not match the model"));
        }
        if x.n_time % 2 != 0 || mask.n_views() != x.n_views || mask.n_time() != x.n_time {
            return Err(Error::input("mask does not match the token grid"));
        }
        if x.tokens.len() != x.len() * x.dim {
            return Err(Error::input("token buffer length does not match the grid"));
        }
        let ctx = Ctx {
            n_views: x.n_views,
            n_time: x.n_time,
            n_spatial: x.n_spatial(),
            n: x.len(),
            view_mask: ViewMask {
                n_views: x.n_views,
                n_time: x.n_time,
            },
            tv_mask: mask.clone(),
        };
        let (out, _) = self.run_block(block, x.tokens.clone(), &cameras.vectors, &ctx);
        Ok(super::latent::TokenSequence { tokens: out, ..x.clone() })
    }

    pub fn forward(&self, z: &LatentGrid, tau: f64, cond: &Conditioning) -> Result<LatentGrid> {
        Ok(self.forward_with_tape(z, tau, cond)?.0)
    }

    pub fn forward_with_tape(&self, z: &LatentGrid, tau: f64, cond: &Conditioning) -> Result<(LatentGrid, Tape<T>)> {
        self.check_inputs(z, tau, cond)?;
        let cfg = &self.config;
        let (d, td) = (cfg.dim, cfg.token_dim());
        let shape = z.shape;
        let ctx = self.context(shape)?;
        let layout = token_layout(shape, cfg.patch);
        let raw: Vec<T> = layout
            .iter()
            .map(|s| match *s {
                TokenSource::Target(i) => T::lit(z.values[i]),
                TokenSource::Condition(i) => T::lit(cond.condition.values[i]),
            })
            .collect();
        let p = &self.params;
        let n = ctx.n;
        let mut x = linear(&raw, n, td, p.get(self.ids.embed_w), Some(p.get(self.ids.embed_b)), d);
        let time_feat: Vec<T> = time_features(tau, TIME_FEATURES).into_iter().map(T::lit).collect();
        let temb = linear(&time_feat, 1, TIME_FEATURES, p.get(self.ids.time_w), Some(p.get(self.ids.time_b)), d);
        let grid = GridIndex::new(shape.n_views, ctx.n_time, shape.height / cfg.patch, shape.width / cfg.patch);
        for i in 0..n {
            let c = grid.unflatten(i)?;
            let pos = collapse_position(c.v, c.t, c.p, c.q, ctx.n_time)?;
            let pe = positional_encoding(pos.t_prime, pos.p, pos.q, d);
            let row = &mut x[i * d..(i + 1) * d];
            for k in 0..d {
                row[k] += T::lit(pe[k]) + temb[k];
            }
        }
        let cameras: Vec<T> = cond.cameras.iter().flatten().map(|&v| T::lit(v)).collect();
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let emb = self.camera_embedding(b, &cond.cameras);
            let (next, cache) = self.run_block(b, x, &emb.vectors, &ctx);
            blocks.push(cache);
            x = next;
        }
        let per_view = ctx.n_time * ctx.n_spatial;
        let half = shape.frames * ctx.n_spatial;
        let target_rows: Vec<usize> = (0..n).filter(|i| i % per_view < half).collect();
        let mut head_in = Vec::with_capacity(target_rows.len() * d);
        for &i in &target_rows {
            head_in.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let head = linear(&head_in, target_rows.len(), d, p.get(self.ids.head_w), Some(p.get(self.ids.head_b)), td);
        let mut out = LatentGrid::zeros(shape);
        for (r, &i) in target_rows.iter().enumerate() {
            for k in 0..td {
                if let TokenSource::Target(idx) = layout[i * td + k] {
                    out.values[idx] = head[r * td + k].to_f64_lossy();
                }
            }
        }
        let tape = Tape {
            cache: Some(ForwardCache {
                shape,
                layout,
                raw,
                time_feat,
                cameras,
                blocks,
                target_rows,
                head_in,
            }),
        };
        Ok((out, tape))
    }

    /// Reverse pass for upstream gradient `d_out` on the predicted velocity.
    pub fn backward(&self, tape: &Tape<T>, d_out: &LatentGrid) -> Result<Gradients<T>> {
        let c = tape
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if d_out.shape != c.shape {
            return Err(Error::input(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                d_out.shape, c.shape
            )));
        }
        let cfg = &self.config;
        let (d, td) = (cfg.dim, cfg.token_dim());
        let ctx = self.context(c.shape)?;
        let n = ctx.n;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let span = |id: ParamId| {
            let e = p.entry(id);
            (e.offset, e.len)
        };
        let rows = c.target_rows.len();
        let mut dhead = vec![T::zero(); rows * td];
        for (r, &i) in c.target_rows.iter().enumerate() {
            for k in 0..td {
                if let TokenSource::Target(idx) = c.layout[i * td + k] {
                    dhead[r * td + k] = T::lit(d_out.values[idx]);
                }
            }
        }
        let dhead_in = {
            let (dw, db) = two_mut(&mut grads, span(self.ids.head_w), span(self.ids.head_b));
            linear_backward(&c.head_in, &dhead, rows, d, td, p.get(self.ids.head_w), dw, Some(db))
        };
        let mut dx = vec![T::zero(); n * d];
        for (r, &i) in c.target_rows.iter().enumerate() {
            dx[i * d..(i + 1) * d].copy_from_slice(&dhead_in[r * d..(r + 1) * d]);
        }
        for b in (0..cfg.blocks).rev() {
            dx = self.block_backward(b, &c.blocks[b], &c.cameras, dx, &ctx, &mut grads);
        }
        let mut dsum = vec![T::zero(); d];
        for row in dx.chunks(d) {
            for (s, g) in dsum.iter_mut().zip(row) {
                *s += *g;
            }
        }
        {
            let (dw, db) = two_mut(&mut grads, span(self.ids.time_w), span(self.ids.time_b));
            linear_backward(&c.time_feat, &dsum, 1, TIME_FEATURES, d, p.get(self.ids.time_w), dw, Some(db));
        }
        let draw = {
            let (dw, db) = two_mut(&mut grads, span(self.ids.embed_w), span(self.ids.embed_b));
            linear_backward(&c.raw, &dx, n, td, d, p.get(self.ids.embed_w), dw, Some(db))
        };
        let mut input = vec![T::zero(); c.shape.len()];
        for (k, s) in c.layout.iter().enumerate() {
            if let TokenSource::Target(idx) = *s {
                input[idx] = draw[k];
            }
        }
        Ok(Gradients {
            params: grads,
            input,
            input_shape: c.shape,
        })
    }

    /// Write parameters as a named-array checkpoint with the config in its
    /// manifest metadata.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = self.params.to_container();
        c.meta = serde_json::json!({ "kind": "velocity_field", "config": self.config });
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = ArrayContainer::load(path)?;
        Self::from_container(&c)
    }

    pub fn from_container(c: &ArrayContainer) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let mut m = Self::zeros(config)?;
        m.params.load_container(c)?;
        Ok(m)
    }
}
