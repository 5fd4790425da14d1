use super::grid::GridIndex;
use super::mask::{SlotMask, TVMask};
use crate::error::{Error, Result};
use crate::real::Real;

/// Fill value for masked logits in the dense oracle.
const MASK_FILL: f64 = -1e9;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::input(format!(
                "matrix buffer has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }
}

/// Softmax probabilities saved by [`attention_forward`], one run of allowed
/// keys per (head, query).
#[derive(Debug, Clone, Default)]
pub struct AttentionProbs<T> {
    pub n: usize,
    pub heads: usize,
    pub slot_size: usize,
    key_slots: Vec<Vec<usize>>,
    row_offset: Vec<usize>,
    per_head: usize,
    pub probs: Vec<T>,
}

impl<T: Real> AttentionProbs<T> {
    fn keys_for(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let s = self.slot_size;
        self.key_slots[i / s].iter().flat_map(move |&b| b * s..(b + 1) * s)
    }

    /// Weights of query `i` under head `h`, aligned with its allowed keys.
    pub fn row(&self, h: usize, i: usize) -> &[T] {
        let start = h * self.per_head + self.row_offset[i];
        &self.probs[start..start + self.row_offset[i + 1] - self.row_offset[i]]
    }
}

fn check_shapes(q_len: usize, k_len: usize, v_len: usize, n: usize, d: usize) -> Result<()> {
    if q_len != n * d || k_len != n * d || v_len != n * d {
        return Err(Error::input(format!(
            "attention inputs must be {n}x{d}; got {q_len}, {k_len}, {v_len} values"
        )));
    }
    Ok(())
}

/// Multi-head masked softmax attention over `n` tokens of width `d`.
///
/// Each head uses a `d / heads` channel slice and the scale
/// `1 / sqrt(d / heads)`. Keys outside the mask get exactly zero weight.
/// Reductions run sequentially in key order, so results are bitwise
/// reproducible.
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    heads: usize,
    mask: &dyn SlotMask,
    slot_size: usize,
) -> Result<(Vec<T>, AttentionProbs<T>)> {
    check_shapes(q.len(), k.len(), v.len(), n, d)?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::input(format!("width {d} is not divisible into {heads} heads")));
    }
    if slot_size == 0 || mask.n_slots() * slot_size != n {
        return Err(Error::input(format!(
            "mask covers {} slots of {} tokens but there are {n} tokens",
            mask.n_slots(),
            slot_size
        )));
    }
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let key_slots = mask.key_slots();
    let mut row_offset = Vec::with_capacity(n + 1);
    row_offset.push(0);
    for i in 0..n {
        let last = *row_offset.last().expect("non-empty");
        row_offset.push(last + key_slots[i / slot_size].len() * slot_size);
    }
    let per_head = row_offset[n];
    let mut probs = AttentionProbs {
        n,
        heads,
        slot_size,
        key_slots,
        row_offset,
        per_head,
        probs: vec![T::zero(); per_head * heads],
    };
    let mut out = vec![T::zero(); n * d];
    let mut scores: Vec<T> = Vec::new();
    let mut keys: Vec<usize> = Vec::new();
    for i in 0..n {
        keys.clear();
        keys.extend(probs.keys_for(i));
        for h in 0..heads {
            let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
            scores.clear();
            let mut max = T::neg_infinity();
            for &j in &keys {
                let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                let mut s = T::zero();
                for c in 0..dh {
                    s += qi[c] * kj[c];
                }
                let s = s * scale;
                if s > max {
                    max = s;
                }
                scores.push(s);
            }
            let mut sum = T::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let inv = T::one() / sum;
            let start = h * per_head + probs.row_offset[i];
            let oi = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for (local, &j) in keys.iter().enumerate() {
                let p = scores[local] * inv;
                probs.probs[start + local] = p;
                let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
                for c in 0..dh {
                    oi[c] += p * vj[c];
                }
            }
        }
    }
    Ok((out, probs))
}

/// Reverse pass of [`attention_forward`]: returns `(dq, dk, dv)`.
pub fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    probs: &AttentionProbs<T>,
    d_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = probs.n;
    let heads = probs.heads;
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp: Vec<T> = Vec::new();
    for i in 0..n {
        for h in 0..heads {
            let row = probs.row(h, i);
            let doi = &d_out[i * d + h * dh..i * d + (h + 1) * dh];
            dp.clear();
            let mut dot = T::zero();
            for (local, j) in probs.keys_for(i).enumerate() {
                let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
                let mut g = T::zero();
                for c in 0..dh {
                    g += doi[c] * vj[c];
                }
                dp.push(g);
                dot += row[local] * g;
                let p = row[local];
                let dvj = &mut dv[j * d + h * dh..j * d + (h + 1) * dh];
                for c in 0..dh {
                    dvj[c] += p * doi[c];
                }
            }
            let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
            for (local, j) in probs.keys_for(i).enumerate() {
                let ds = row[local] * (dp[local] - dot) * scale;
                let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                let dqi = &mut dq[i * d + h * dh..i * d + (h + 1) * dh];
                for c in 0..dh {
                    dqi[c] += ds * kj[c];
                }
                let dkj = &mut dk[j * d + h * dh..j * d + (h + 1) * dh];
                for c in 0..dh {
                    dkj[c] += ds * qi[c];
                }
            }
        }
    }
    (dq, dk, dv)
}

fn check_grid(q: &Mat<f64>, k: &Mat<f64>, v: &Mat<f64>, mask: &TVMask, grid: &GridIndex) -> Result<()> {
    if q.rows != grid.len() || k.rows != grid.len() || v.rows != grid.len() {
        return Err(Error::input(format!(
            "grid has {} tokens but Q/K/V have {}/{}/{} rows",
            grid.len(),
            q.rows,
            k.rows,
            v.rows
        )));
    }
    if q.cols != k.cols || q.cols != v.cols {
        return Err(Error::input("Q, K and V must share a width"));
    }
    if grid.n_views != mask.n_views() || grid.n_time != mask.n_time() {
        return Err(Error::input(format!(
            "mask is for {}x{} slots but the grid has {}x{}",
            mask.n_views(),
            mask.n_time(),
            grid.n_views,
            grid.n_time
        )));
    }
    Ok(())
}

/// Single-head sparse masked attention over the token grid.
pub fn masked_attention(q: &Mat<f64>, k: &Mat<f64>, v: &Mat<f64>, mask: &TVMask, grid: &GridIndex) -> Result<Mat<f64>> {
    check_grid(q, k, v, mask, grid)?;
    let (out, _) = attention_forward(&q.data, &k.data, &v.data, q.rows, q.cols, 1, mask, grid.n_spatial())?;
    Mat::from_vec(q.rows, q.cols, out)
}

/// Full `N x N` softmax weights with masked logits replaced by a large
/// negative constant; the reference the sparse kernel is checked against.
pub fn dense_oracle_weights(q: &Mat<f64>, k: &Mat<f64>, mask: &dyn SlotMask, slot_size: usize) -> Mat<f64> {
    let n = q.rows;
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut w = Mat::zeros(n, n);
    for i in 0..n {
        let row = &mut w.data[i * n..(i + 1) * n];
        for (j, r) in row.iter_mut().enumerate() {
            let s: f64 = q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
            *r = if mask.allows(i / slot_size, j / slot_size) { s } else { s + MASK_FILL };
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
    }
    w
}

pub fn dense_oracle_attention(
    q: &Mat<f64>,
    k: &Mat<f64>,
    v: &Mat<f64>,
    mask: &dyn SlotMask,
    slot_size: usize,
) -> Result<Mat<f64>> {
    if q.rows != k.rows || q.rows != v.rows || q.cols != k.cols || mask.n_slots() * slot_size != q.rows {
        return Err(Error::input("dense attention shapes are inconsistent"));
    }
    let w = dense_oracle_weights(q, k, mask, slot_size);
    let (n, d) = (q.rows, v.cols);
    let mut out = Mat::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let p = w.at(i, j);
            for c in 0..d {
                out.data[i * d + c] += p * v.at(j, c);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::mask::{build_mask, FullMask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<f64> {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn full_mask_equals_plain_softmax_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (random_mat(&mut rng, 6, 4), random_mat(&mut rng, 6, 4), random_mat(&mut rng, 6, 4));
        let (out, _) = attention_forward(&q.data, &k.data, &v.data, 6, 4, 1, &FullMask { n_slots: 3 }, 2).unwrap();
        // plain attention written out directly
        for i in 0..6 {
            let s: Vec<f64> = (0..6).map(|j| q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() / 2.0).collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            for c in 0..4 {
                let want: f64 = (0..6).map(|j| s[j].exp() / z * v.at(j, c)).sum();
                assert!((out[i * 4 + c] - want).abs() < 1e-12);
            }
        }
    }

    struct DiagonalOnly(usize);
    impl SlotMask for DiagonalOnly {
        fn n_slots(&self) -> usize {
            self.0
        }
        fn allows(&self, a: usize, b: usize) -> bool {
            a == b
        }
    }

    #[test]
    fn identity_mask_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (random_mat(&mut rng, 5, 3), random_mat(&mut rng, 5, 3), random_mat(&mut rng, 5, 3));
        let (out, _) = attention_forward(&q.data, &k.data, &v.data, 5, 3, 1, &DiagonalOnly(5), 1).unwrap();
        for (a, b) in out.iter().zip(&v.data) {
            assert!((a - b).abs() < 1e-15);
        }
        let single = dense_oracle_attention(&q, &k, &v, &FullMask { n_slots: 1 }, 5).unwrap();
        let one = Mat::from_vec(1, 3, vec![0.3, -0.2, 0.9]).unwrap();
        let s = dense_oracle_attention(&one, &one, &one, &FullMask { n_slots: 1 }, 1).unwrap();
        assert_eq!(s, one);
        assert_eq!(single.rows, 5);
    }

    #[test]
    fn sparse_matches_dense_oracle_and_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = GridIndex::with_spatial(3, 4, 2);
        let mask = build_mask(3, 2).unwrap();
        for _ in 0..10 {
            let n = grid.len();
            let (q, k, v) = (random_mat(&mut rng, n, 5), random_mat(&mut rng, n, 5), random_mat(&mut rng, n, 5));
            let sparse = masked_attention(&q, &k, &v, &mask, &grid).unwrap();
            let dense = dense_oracle_attention(&q, &k, &v, &mask, grid.n_spatial()).unwrap();
            assert!(max_abs_diff(&sparse, &dense) < 1e-6);
            let w = dense_oracle_weights(&q, &k, &mask, grid.n_spatial());
            for i in 0..n {
                let sum: f64 = w.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                for j in 0..n {
                    if !mask.allows(grid.slot_of(i), grid.slot_of(j)) {
                        assert!(w.at(i, j) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn permuting_tokens_permutes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, k, v) = (random_mat(&mut rng, 4, 3), random_mat(&mut rng, 4, 3), random_mat(&mut rng, 4, 3));
        // mask over single-token slots: token 3 only sees itself
        struct M;
        impl SlotMask for M {
            fn n_slots(&self) -> usize {
                4
            }
            fn allows(&self, a: usize, b: usize) -> bool {
                a == b || (a != 3 && b != 3)
            }
        }
        struct Mp;
        // same mask after swapping tokens 0 and 3
        impl SlotMask for Mp {
            fn n_slots(&self) -> usize {
                4
            }
            fn allows(&self, a: usize, b: usize) -> bool {
                a == b || (a != 0 && b != 0)
            }
        }
        let perm = [3, 1, 2, 0];
        let permute = |m: &Mat<f64>| {
            let mut data = Vec::new();
            for &p in &perm {
                data.extend_from_slice(m.row(p));
            }
            Mat::from_vec(4, 3, data).unwrap()
        };
        let out = dense_oracle_attention(&q, &k, &v, &M, 1).unwrap();
        let out_p = dense_oracle_attention(&permute(&q), &permute(&k), &permute(&v), &Mp, 1).unwrap();
        assert!(max_abs_diff(&permute(&out), &out_p) < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let grid = GridIndex::with_spatial(2, 2, 1);
        let mask = build_mask(2, 1).unwrap();
        let q = Mat::<f64>::zeros(4, 2);
        let bad = Mat::<f64>::zeros(3, 2);
        assert!(matches!(masked_attention(&q, &bad, &q, &mask, &grid), Err(Error::Input(_))));
        let other_mask = build_mask(1, 2).unwrap();
        assert!(masked_attention(&q, &q, &q, &other_mask, &grid).is_err());
    }

    fn fd_check(heads: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(5 + heads as u64);
        let mask = build_mask(2, 1).unwrap();
        let (n, d, s) = (8, 4, 2);
        let q: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |q: &[f64], k: &[f64], v: &[f64]| {
            let (o, _) = attention_forward(q, k, v, n, d, heads, &mask, s).unwrap();
            o.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, probs) = attention_forward(&q, &k, &v, n, d, heads, &mask, s).unwrap();
        let (dq, dk, dv) = attention_backward(&q, &k, &v, d, &probs, &w);
        let h = 1e-5;
        for (which, grad) in [(0, &dq), (1, &dk), (2, &dv)] {
            for idx in 0..n * d {
                let mut plus = [q.clone(), k.clone(), v.clone()];
                let mut minus = [q.clone(), k.clone(), v.clone()];
                plus[which][idx] += h;
                minus[which][idx] -= h;
                let fd = (loss(&plus[0], &plus[1], &plus[2]) - loss(&minus[0], &minus[1], &minus[2])) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-8, "input {which} idx {idx}: {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        fd_check(1);
        fd_check(2);
    }

    #[test]
    fn disallowed_keys_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = GridIndex::with_spatial(3, 4, 2);
        let mask = build_mask(3, 2).unwrap();
        let (n, d) = (grid.len(), 4);
        let q: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        // one-hot upstream on query token (v=2, t=0, p=0)
        let i = grid.flatten(2, 0, 0, 1).unwrap();
        let mut up = vec![0.0; n * d];
        up[i * d + 1] = 1.0;
        let (out, probs) = attention_forward(&q, &k, &v, n, d, 2, &mask, 2).unwrap();
        let (_, dk, dv) = attention_backward(&q, &k, &v, d, &probs, &up);
        let j = grid.flatten(1, 1, 0, 0).unwrap();
        assert!(!mask.allows(grid.slot_of(i), grid.slot_of(j)));
        assert!(dk[j * d..(j + 1) * d].iter().all(|&g| g == 0.0));
        assert!(dv[j * d..(j + 1) * d].iter().all(|&g| g == 0.0));
        // perturbing that key leaves the queried output unchanged
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        for c in 0..d {
            k2[j * d + c] += 0.7;
            v2[j * d + c] -= 0.3;
        }
        let (out2, _) = attention_forward(&q, &k2, &v2, n, d, 2, &mask, 2).unwrap();
        assert!((out[i * d + 1] - out2[i * d + 1]).abs() < 1e-10);
    }
}
