use crate::real::Real;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
    let th = inner.tanh();
    let d_inner = T::lit(SQRT_2_OVER_PI) * (T::one() + T::lit(3.0 * GELU_CUBIC) * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * d_inner
}

fn sinusoid_into(out: &mut [f64], pos: f64) {
    let m = out.len();
    for (k, o) in out.iter_mut().enumerate() {
        let freq = (-(10000f64.ln()) * (k / 2 * 2) as f64 / m.max(1) as f64).exp();
        *o = if k % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() };
    }
}

/// Fixed sinusoidal code for a collapsed `(t', p, q)` position. Half the
/// channels encode `t'`, a quarter each encode `p` and `q`.
pub fn positional_encoding(t_prime: usize, p: usize, q: usize, dim: usize) -> Vec<f64> {
    let a = dim / 2;
    let b = a + (dim - a) / 2;
    let mut out = vec![0.0; dim];
    sinusoid_into(&mut out[..a], t_prime as f64);
    sinusoid_into(&mut out[a..b], p as f64);
    sinusoid_into(&mut out[b..], q as f64);
    out
}

/// Sinusoidal features of the flow time `tau`, before the learned projection.
pub fn time_features(tau: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    sinusoid_into(&mut out, 1000.0 * tau);
    out
}

/// `y = x Wᵀ + b` for `n` rows; `w` is `out × in` row-major.
pub(crate) fn linear<T: Real>(x: &[T], n: usize, d_in: usize, w: &[T], b: Option<&[T]>, d_out: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), n * d_in);
    debug_assert_eq!(w.len(), d_out * d_in);
    let mut y = vec![T::zero(); n * d_out];
    for r in 0..n {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let yr = &mut y[r * d_out..(r + 1) * d_out];
        for (o, y) in yr.iter_mut().enumerate() {
            let wo = &w[o * d_in..(o + 1) * d_in];
            let mut s = match b {
                Some(b) => b[o],
                None => T::zero(),
            };
            for i in 0..d_in {
                s += wo[i] * xr[i];
            }
            *y = s;
        }
    }
    y
}

/// Reverse of [`linear`]: accumulates `dW` (and `db`) and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    d_in: usize,
    d_out: usize,
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
) -> Vec<T> {
    let mut dx = vec![T::zero(); n * d_in];
    for r in 0..n {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let gr = &dy[r * d_out..(r + 1) * d_out];
        let dxr = &mut dx[r * d_in..(r + 1) * d_in];
        for o in 0..d_out {
            let g = gr[o];
            if g == T::zero() {
                continue;
            }
            let wo = &w[o * d_in..(o + 1) * d_in];
            let dwo = &mut dw[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                dwo[i] += g * xr[i];
                dxr[i] += g * wo[i];
            }
        }
    }
    if let Some(db) = db {
        for r in 0..n {
            for o in 0..d_out {
                db[o] += dy[r * d_out + o];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0f64, -1.0, -0.2, 0.0, 0.4, 1.7, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let x = [1.0, 2.0, -1.0];
        let w = [0.5, -0.5, 1.0, 2.0, 0.0, 1.0];
        let dy = [3.0, -1.0];
        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        let dx = linear_backward(&x, &dy, 1, 3, 2, &w, &mut dw, Some(&mut db));
        assert_eq!(dw, [3.0, 6.0, -3.0, -1.0, -2.0, 1.0]);
        assert_eq!(db, dy);
        assert_eq!(dx, vec![3.0 * 0.5 - 2.0, -1.5, 3.0 - 1.0]);
        let y = linear(&x, 1, 3, &w, Some(&[1.0, 1.0]), 2);
        assert_eq!(y, vec![-1.5 + 1.0, 2.0 - 1.0 + 1.0]);
    }

    #[test]
    fn encodings_are_bounded_and_distinct() {
        let a = positional_encoding(3, 1, 2, 32);
        let b = positional_encoding(19, 1, 2, 32);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
        assert_eq!(time_features(0.5, 32).len(), 32);
    }
}
