use crate::real::Real;

/// A screen-space Gaussian ready for compositing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat<T> {
    pub mean: [T; 2],
    /// Symmetric covariance `[a, b, c]` for `[[a, b], [b, c]]`, in px².
    pub cov: [T; 3],
    pub depth: T,
    /// Opacity in `[0, 1]`.
    pub opacity: T,
    pub color: [T; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrad<T> {
    pub mean: [T; 2],
    pub cov: [T; 3],
    pub opacity: T,
    pub color: [T; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    /// Contributions with smaller alpha are skipped.
    pub alpha_min: f64,
    /// Per-splat alpha is clamped to this.
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this.
    pub t_min: f64,
    /// Splat footprint radius in standard deviations; `inf` covers the image.
    pub extent_sigma: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            t_min: 1e-4,
            extent_sigma: 3.0,
        }
    }
}

impl RasterConfig {
    /// No thresholds or truncation, so the image is smooth in every input.
    pub fn exact() -> Self {
        Self {
            alpha_min: 0.0,
            alpha_max: 0.99,
            t_min: 0.0,
            extent_sigma: f64::INFINITY,
        }
    }
}

/// Composited image with accumulated opacity and opacity-weighted depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterOutput<T> {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub color: Vec<T>,
    /// `1 - final transmittance` per pixel.
    pub alpha: Vec<T>,
    /// `sum T_i alpha_i depth_i` per pixel.
    pub depth: Vec<T>,
}

const TILE: usize = 16;

struct Prepared<T> {
    conic: Vec<[T; 3]>,
    bbox: Vec<[usize; 4]>,
    tiles: Vec<Vec<usize>>,
    tiles_x: usize,
}

fn prepare<T: Real>(splats: &[Splat<T>], width: usize, height: usize, cfg: &RasterConfig) -> Prepared<T> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .partial_cmp(&splats[b].depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let mut conic = vec![[T::zero(); 3]; splats.len()];
    let mut bbox = vec![[0usize; 4]; splats.len()];
    for &i in &order {
        let s = &splats[i];
        let [a, b, c] = s.cov;
        let det = a * c - b * b;
        if !(det > T::zero()) || !(s.opacity > T::zero()) {
            continue;
        }
        conic[i] = [c / det, -b / det, a / det];
        let (x0, x1, y0, y1) = if cfg.extent_sigma.is_finite() {
            let half = (a + c) * T::lit(0.5);
            let disc = (half * half - det).max(T::zero()).sqrt();
            let r = T::lit(cfg.extent_sigma) * (half + disc).sqrt();
            let (mx, my) = (s.mean[0].to_f64_lossy(), s.mean[1].to_f64_lossy());
            let r = r.to_f64_lossy();
            let lo_x = (mx - r - 0.5).floor().max(0.0);
            let hi_x = (mx + r - 0.5).ceil().min(width as f64 - 1.0);
            let lo_y = (my - r - 0.5).floor().max(0.0);
            let hi_y = (my + r - 0.5).ceil().min(height as f64 - 1.0);
            if !(lo_x <= hi_x && lo_y <= hi_y) {
                continue;
            }
            (lo_x as usize, hi_x as usize, lo_y as usize, hi_y as usize)
        } else {
            (0, width - 1, 0, height - 1)
        };
        bbox[i] = [x0, x1, y0, y1];
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tiles[ty * tiles_x + tx].push(i);
            }
        }
    }
    Prepared {
        conic,
        bbox,
        tiles,
        tiles_x,
    }
}

/// Gaussian falloff of splat `i` at pixel `(x, y)`; `None` outside its box.
#[inline]
fn falloff<T: Real>(s: &Splat<T>, conic: &[T; 3], bbox: &[usize; 4], x: usize, y: usize) -> Option<(T, T, T)> {
    if x < bbox[0] || x > bbox[1] || y < bbox[2] || y > bbox[3] {
        return None;
    }
    let dx = T::lit(x as f64 + 0.5) - s.mean[0];
    let dy = T::lit(y as f64 + 0.5) - s.mean[1];
    let power = T::lit(-0.5) * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
    if power > T::zero() {
        return None;
    }
    Some((power.exp(), dx, dy))
}

/// Front-to-back alpha compositing over a black background, in ascending
/// depth with ties broken by input index.
pub fn rasterize<T: Real>(splats: &[Splat<T>], width: usize, height: usize, cfg: &RasterConfig) -> RasterOutput<T> {
    let mut out = RasterOutput {
        width,
        height,
        color: vec![T::zero(); width * height * 3],
        alpha: vec![T::zero(); width * height],
        depth: vec![T::zero(); width * height],
    };
    if width == 0 || height == 0 {
        return out;
    }
    let prep = prepare(splats, width, height, cfg);
    let (amin, amax, tmin) = (T::lit(cfg.alpha_min), T::lit(cfg.alpha_max), T::lit(cfg.t_min));
    for y in 0..height {
        for x in 0..width {
            let list = &prep.tiles[(y / TILE) * prep.tiles_x + x / TILE];
            let mut trans = T::one();
            let mut rgb = [T::zero(); 3];
            let mut depth = T::zero();
            for &i in list {
                let s = &splats[i];
                let Some((w, _, _)) = falloff(s, &prep.conic[i], &prep.bbox[i], x, y) else {
                    continue;
                };
                let alpha = (s.opacity * w).min(amax);
                if alpha < amin {
                    continue;
                }
                let weight = trans * alpha;
                for ch in 0..3 {
                    rgb[ch] += weight * s.color[ch];
                }
                depth += weight * s.depth;
                trans *= T::one() - alpha;
                if trans < tmin {
                    break;
                }
            }
            let p = y * width + x;
            out.color[3 * p..3 * p + 3].copy_from_slice(&rgb);
            out.alpha[p] = T::one() - trans;
            out.depth[p] = depth;
        }
    }
    out
}

/// Gradients of `<d_color, rasterize(splats).color>` with respect to every
/// splat's mean, covariance, opacity and color.
pub fn rasterize_backward<T: Real>(
    splats: &[Splat<T>],
    width: usize,
    height: usize,
    cfg: &RasterConfig,
    d_color: &[T],
) -> Vec<SplatGrad<T>> {
    let mut grads = vec![SplatGrad::default(); splats.len()];
    let mut d_conic = vec![[T::zero(); 3]; splats.len()];
    if width == 0 || height == 0 {
        return grads;
    }
    let prep = prepare(splats, width, height, cfg);
    let (amin, amax, tmin) = (T::lit(cfg.alpha_min), T::lit(cfg.alpha_max), T::lit(cfg.t_min));
    // (index, alpha, falloff, dx, dy, transmittance before, clamped)
    let mut hits: Vec<(usize, T, T, T, T, T, bool)> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let dc = [d_color[3 * p], d_color[3 * p + 1], d_color[3 * p + 2]];
            if dc.iter().all(|&g| g == T::zero()) {
                continue;
            }
            hits.clear();
            let list = &prep.tiles[(y / TILE) * prep.tiles_x + x / TILE];
            let mut trans = T::one();
            for &i in list {
                let s = &splats[i];
                let Some((w, dx, dy)) = falloff(s, &prep.conic[i], &prep.bbox[i], x, y) else {
                    continue;
                };
                let raw = s.opacity * w;
                let alpha = raw.min(amax);
                if alpha < amin {
                    continue;
                }
                hits.push((i, alpha, w, dx, dy, trans, raw > amax));
                trans *= T::one() - alpha;
                if trans < tmin {
                    break;
                }
            }
            let mut behind = [T::zero(); 3];
            for &(i, alpha, w, dx, dy, t_i, clamped) in hits.iter().rev() {
                let s = &splats[i];
                let g = &mut grads[i];
                let mut d_alpha = T::zero();
                for ch in 0..3 {
                    g.color[ch] += t_i * alpha * dc[ch];
                    d_alpha += dc[ch] * (t_i * s.color[ch] - behind[ch] / (T::one() - alpha));
                }
                for ch in 0..3 {
                    behind[ch] += t_i * alpha * s.color[ch];
                }
                if clamped {
                    continue;
                }
                g.opacity += d_alpha * w;
                let d_power = d_alpha * s.opacity * w;
                let c = &prep.conic[i];
                g.mean[0] += d_power * (c[0] * dx + c[1] * dy);
                g.mean[1] += d_power * (c[1] * dx + c[2] * dy);
                let dcn = &mut d_conic[i];
                dcn[0] += d_power * T::lit(-0.5) * dx * dx;
                dcn[1] -= d_power * dx * dy;
                dcn[2] += d_power * T::lit(-0.5) * dy * dy;
            }
        }
    }
    for (i, g) in grads.iter_mut().enumerate() {
        let [ga, gb, gc] = d_conic[i];
        if ga == T::zero() && gb == T::zero() && gc == T::zero() {
            continue;
        }
        let [a, b, c] = prep.conic[i];
        let half = gb * T::lit(0.5);
        // -M G M with M the conic matrix and G the symmetric upstream
        let m00 = a * ga + b * half;
        let m01 = a * half + b * gc;
        let m10 = b * ga + c * half;
        let m11 = b * half + c * gc;
        let s00 = -(m00 * a + m01 * b);
        let s01 = -(m00 * b + m01 * c);
        let s11 = -(m10 * b + m11 * c);
        g.cov = [s00, T::lit(2.0) * s01, s11];
    }
    grads
}
