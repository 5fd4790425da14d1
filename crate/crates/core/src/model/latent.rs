use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LatentShape {
    pub n_views: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub fn len(&self) -> usize {
        self.n_views * self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pixel-space latent tensor laid out as `[view][frame][channel][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub shape: LatentShape,
    pub values: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(shape: LatentShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn new(shape: LatentShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::input(format!(
                "latent of shape {shape:?} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("latent values must be finite"));
        }
        Ok(Self { shape, values })
    }

    #[inline]
    pub fn index(&self, v: usize, t: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        (((v * s.frames + t) * s.channels + c) * s.height + y) * s.width + x
    }

    #[inline]
    pub fn at(&self, v: usize, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.values[self.index(v, t, c, y, x)]
    }
}

/// Patch tokens before embedding, on a `views × 2f × rows × cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T = f64> {
    pub n_views: usize,
    pub n_time: usize,
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub tokens: Vec<T>,
}

impl<T: Real> TokenSequence<T> {
    pub fn n_spatial(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.n_views * self.n_time * self.n_spatial()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, i: usize) -> &[T] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }
}

/// Patchify both halves and concatenate them along time, per view.
pub fn tokenize(target: &LatentGrid, condition: &LatentGrid, patch: usize) -> Result<TokenSequence> {
    let s = target.shape;
    if condition.shape != s {
        return Err(Error::input(format!(
            "target {:?} and condition {:?} shapes differ",
            s, condition.shape
        )));
    }
    if patch == 0 || s.height % patch != 0 || s.width % patch != 0 {
        return Err(Error::input(format!(
            "{}x{} latent is not divisible into {patch}x{patch} patches",
            s.height, s.width
        )));
    }
    let (rows, cols) = (s.height / patch, s.width / patch);
    let dim = s.channels * patch * patch;
    let n_time = 2 * s.frames;
    let mut tokens = Vec::with_capacity(s.n_views * n_time * rows * cols * dim);
    for v in 0..s.n_views {
        for t in 0..n_time {
            let (src, tt) = if t < s.frames { (target, t) } else { (condition, t - s.frames) };
            for pr in 0..rows {
                for pc in 0..cols {
                    for c in 0..s.channels {
                        for dy in 0..patch {
                            for dx in 0..patch {
                                tokens.push(src.at(v, tt, c, pr * patch + dy, pc * patch + dx));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(TokenSequence {
        n_views: s.n_views,
        n_time,
        rows,
        cols,
        dim,
        tokens,
    })
}

/// Inverse of [`tokenize`]: returns `(target, condition)`.
pub fn detokenize(seq: &TokenSequence, channels: usize, patch: usize) -> Result<(LatentGrid, LatentGrid)> {
    if seq.n_time % 2 != 0 || seq.dim != channels * patch * patch || seq.tokens.len() != seq.len() * seq.dim {
        return Err(Error::input("token sequence does not match the requested patch layout"));
    }
    let shape = LatentShape {
        n_views: seq.n_views,
        frames: seq.n_time / 2,
        channels,
        height: seq.rows * patch,
        width: seq.cols * patch,
    };
    let mut target = LatentGrid::zeros(shape);
    let mut condition = LatentGrid::zeros(shape);
    let mut k = 0;
    for v in 0..seq.n_views {
        for t in 0..seq.n_time {
            let (dst, tt) = if t < shape.frames {
                (&mut target, t)
            } else {
                (&mut condition, t - shape.frames)
            };
            for pr in 0..seq.rows {
                for pc in 0..seq.cols {
                    for c in 0..channels {
                        for dy in 0..patch {
                            for dx in 0..patch {
                                let idx = dst.index(v, tt, c, pr * patch + dy, pc * patch + dx);
                                dst.values[idx] = seq.tokens[k];
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((target, condition))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: LatentShape, offset: f64) -> LatentGrid {
        LatentGrid::new(shape, (0..shape.len()).map(|i| offset + i as f64 * 0.25).collect()).unwrap()
    }

    #[test]
    fn patch_one_flattens_pixels() {
        let shape = LatentShape {
            n_views: 1,
            frames: 1,
            channels: 1,
            height: 3,
            width: 2,
        };
        let seq = tokenize(&ramp(shape, 0.0), &ramp(shape, 100.0), 1).unwrap();
        assert_eq!((seq.n_spatial(), seq.dim, seq.n_time), (6, 1, 2));
        assert_eq!(&seq.tokens[..6], &[0.0, 0.25, 0.5, 0.75, 1.0, 1.25]);
        assert_eq!(seq.tokens[6], 100.0);
    }

    #[test]
    fn time_axis_doubles_with_target_first() {
        let shape = LatentShape {
            n_views: 2,
            frames: 3,
            channels: 2,
            height: 4,
            width: 4,
        };
        let seq = tokenize(&ramp(shape, 0.0), &ramp(shape, 1000.0), 2).unwrap();
        assert_eq!(seq.n_time, 6);
        let per_slot = seq.n_spatial();
        for v in 0..2 {
            for t in 0..6 {
                let first = seq.token((v * 6 + t) * per_slot)[0];
                assert_eq!(first >= 1000.0, t >= 3);
            }
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let shape = LatentShape {
            n_views: 3,
            frames: 2,
            channels: 3,
            height: 4,
            width: 6,
        };
        let (a, b) = (ramp(shape, -7.0), ramp(shape, 0.125));
        for patch in [1, 2] {
            let seq = tokenize(&a, &b, patch).unwrap();
            let (a2, b2) = detokenize(&seq, 3, patch).unwrap();
            assert_eq!(a2, a);
            assert_eq!(b2, b);
        }
    }

    #[test]
    fn indivisible_patch_is_rejected() {
        let shape = LatentShape {
            n_views: 1,
            frames: 1,
            channels: 1,
            height: 3,
            width: 4,
        };
        let g = LatentGrid::zeros(shape);
        assert!(matches!(tokenize(&g, &g, 2), Err(Error::Input(_))));
    }
}
