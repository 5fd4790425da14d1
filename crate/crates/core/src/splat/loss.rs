use crate::error::{Error, Result};
use crate::imaging::Image;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (k, v) in g.iter_mut().enumerate() {
        let d = k as f64 - half;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian blur with zero padding. The kernel is symmetric, so
/// this operator is its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += gk * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += gk * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).cloned().collect()
}

/// Mean SSIM over pixels and channels, and optionally its gradient with
/// respect to `a`.
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    a.ensure_same_size(b)?;
    let (w, h) = (a.width, a.height);
    let n = (w * h * 3) as f64;
    if w == 0 || h == 0 {
        return Err(Error::input("SSIM of an empty image"));
    }
    let g = window();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for ch in 0..3 {
        let x = plane(a, ch);
        let y = plane(b, ch);
        let mx = blur(&x, w, h, &g);
        let my = blur(&y, w, h, &g);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let exx = blur(&xx, w, h, &g);
        let eyy = blur(&yy, w, h, &g);
        let exy = blur(&xy, w, h, &g);
        let mut d_mu = vec![0.0; w * h];
        let mut d_var = vec![0.0; w * h];
        let mut d_cov = vec![0.0; w * h];
        for p in 0..w * h {
            let vx = exx[p] - mx[p] * mx[p];
            let vy = eyy[p] - my[p] * my[p];
            let cxy = exy[p] - mx[p] * my[p];
            let a1 = 2.0 * mx[p] * my[p] + C1;
            let a2 = 2.0 * cxy + C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + C1;
            let b2 = vx + vy + C2;
            // factored so identical inputs give exactly s = 1 and a zero gradient
            let (r1, r2) = (a1 / b1, a2 / b2);
            let s = r1 * r2;
            total += s;
            if want_grad {
                d_mu[p] = 2.0 / b1 * (my[p] * r2 - s * mx[p]);
                d_var[p] = -s / b2;
                d_cov[p] = 2.0 * r1 / b2;
            }
        }
        if let Some(gr) = grad.as_mut() {
            // d sigma_x² / dx = 2 G(x - mu_x); d sigma_xy / dx = G(y - mu_y)
            let t_mu = blur(&d_mu, w, h, &g);
            let t_var = blur(&d_var, w, h, &g);
            let var_mu: Vec<f64> = d_var.iter().zip(&mx).map(|(d, m)| d * m).collect();
            let t_var_mu = blur(&var_mu, w, h, &g);
            let t_cov = blur(&d_cov, w, h, &g);
            let cov_mu: Vec<f64> = d_cov.iter().zip(&my).map(|(d, m)| d * m).collect();
            let t_cov_mu = blur(&cov_mu, w, h, &g);
            for p in 0..w * h {
                let v = t_mu[p] + (2.0 * x[p] * t_var[p] + y[p] * t_cov[p]) - (2.0 * t_var_mu[p] + t_cov_mu[p]);
                gr[3 * p + ch] = v / n;
            }
        }
    }
    Ok((total / n, grad))
}

/// Mean structural similarity with an 11×11 Gaussian window (sigma 1.5)
/// and the usual constants for data in `[0, 1]`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

/// `mean |rendered - target| + lambda_ssim (1 - SSIM)` and its gradient
/// with respect to `rendered`.
pub fn recon_loss(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<(f64, Vec<f64>)> {
    rendered.ensure_same_size(target)?;
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    let mut loss = l1 / n;
    if lambda_ssim != 0.0 {
        let (s, gs) = ssim_with_grad(rendered, target)?;
        loss += lambda_ssim * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(gs) {
            *g -= lambda_ssim * d;
        }
    }
    Ok((loss, grad))
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Indices of the `k` nearest other points of each point, nearest first,
/// ties broken by index.
pub fn knn(points: &[[f64; 3]], k: usize) -> Result<Vec<Vec<usize>>> {
    if points.len() < k + 1 {
        return Err(Error::input(format!(
            "{} points are too few for {k} neighbours each",
            points.len()
        )));
    }
    let mut out = Vec::with_capacity(points.len());
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        for (j, q) in points.iter().enumerate() {
            if i != j {
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                cand.push((d2, j));
            }
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, cmp);
        let mut nn = cand[..k].to_vec();
        nn.sort_by(cmp);
        out.push(nn.into_iter().map(|(_, j)| j).collect());
    }
    Ok(out)
}

/// Mean over neighbour edges of `(|d_i - d_j| - |c_i - c_j|)²` and its
/// gradient with respect to the deformed points.
pub fn arap_loss_with_neighbors(
    canonical: &[[f64; 3]],
    deformed: &[[f64; 3]],
    neighbors: &[Vec<usize>],
) -> Result<(f64, Vec<[f64; 3]>)> {
    if canonical.len() != deformed.len() || neighbors.len() != canonical.len() {
        return Err(Error::input("canonical, deformed and neighbour lists differ in length"));
    }
    let edges: usize = neighbors.iter().map(|n| n.len()).sum();
    let mut grad = vec![[0.0; 3]; deformed.len()];
    if edges == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / edges as f64;
    let mut loss = 0.0;
    for (i, nn) in neighbors.iter().enumerate() {
        for &j in nn {
            let d = dist(&deformed[i], &deformed[j]);
            let r = d - dist(&canonical[i], &canonical[j]);
            loss += r * r;
            if d > 0.0 {
                let s = 2.0 * r * inv / d;
                for a in 0..3 {
                    let g = s * (deformed[i][a] - deformed[j][a]);
                    grad[i][a] += g;
                    grad[j][a] -= g;
                }
            }
        }
    }
    Ok((loss * inv, grad))
}

/// ARAP loss over each point's `k` nearest canonical neighbours.
pub fn arap_loss(canonical: &[[f64; 3]], deformed: &[[f64; 3]], k: usize) -> Result<(f64, Vec<[f64; 3]>)> {
    let nn = knn(canonical, k)?;
    arap_loss_with_neighbors(canonical, deformed, &nn)
}

/// Mean squared change of the rotation offsets between consecutive
/// timestamps. `offsets[t][i]` is Gaussian `i`'s offset at timestamp `t`.
pub fn rot_loss_from_offsets(offsets: &[Vec<[f64; 4]>]) -> Result<(f64, Vec<Vec<[f64; 4]>>)> {
    if offsets.len() < 2 {
        return Err(Error::input("rotation smoothness needs at least two timestamps"));
    }
    let n = offsets[0].len();
    if offsets.iter().any(|o| o.len() != n) {
        return Err(Error::input("rotation offsets differ in Gaussian count"));
    }
    let mut grad = vec![vec![[0.0; 4]; n]; offsets.len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / ((offsets.len() - 1) * n) as f64;
    let mut loss = 0.0;
    for t in 0..offsets.len() - 1 {
        for i in 0..n {
            for c in 0..4 {
                let d = offsets[t + 1][i][c] - offsets[t][i][c];
                loss += d * d;
                grad[t + 1][i][c] += 2.0 * d * inv;
                grad[t][i][c] -= 2.0 * d * inv;
            }
        }
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn recon_basics() {
        let a = noise_image(12, 9, 1);
        let (l, g) = recon_loss(&a, &a, 0.2).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        let c0 = Image::filled(8, 8, [0.2; 3]);
        let c1 = Image::filled(8, 8, [0.7; 3]);
        assert!((recon_loss(&c0, &c1, 0.0).unwrap().0 - 0.5).abs() < 1e-12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(recon_loss(&a, &Image::black(3, 3), 0.2).is_err());
    }

    #[test]
    fn ssim_gradient_matches_differences() {
        let a = noise_image(14, 13, 2);
        let b = noise_image(14, 13, 3);
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        for idx in [0, 5, 77, 200, 3 * 14 * 6 + 2, a.data.len() - 1] {
            let (mut p, mut m) = (a.clone(), a.clone());
            p.data[idx] += h;
            m.data[idx] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-9, "{idx}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn arap_is_isometry_invariant_and_scale_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 3]> = (0..20).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| {
                let v = rot * Vector3::from(*p) + Vector3::new(5.0, -2.0, 0.5);
                [v.x, v.y, v.z]
            })
            .collect();
        assert!(arap_loss(&pts, &moved, 8).unwrap().0 < 1e-10);
        // three collinear points at 0, 1, 3 with k = 1: nearest edges have
        // lengths 1, 1, 2, so scaling by 2 gives (1 + 1 + 4) / 3
        let line = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let doubled: Vec<[f64; 3]> = line.iter().map(|p| [2.0 * p[0], 0.0, 0.0]).collect();
        assert!((arap_loss(&line, &doubled, 1).unwrap().0 - 2.0).abs() < 1e-12);
        assert!(arap_loss(&line, &doubled, 3).is_err());
    }

    #[test]
    fn arap_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<[f64; 3]> = (0..12).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let d: Vec<[f64; 3]> = c.iter().map(|p| [p[0] * 1.3, p[1] + 0.1 * p[0], p[2]]).collect();
        let (_, g) = arap_loss(&c, &d, 4).unwrap();
        for i in [0, 5, 11] {
            for a in 0..3 {
                let (mut p, mut m) = (d.clone(), d.clone());
                p[i][a] += 1e-6;
                m[i][a] -= 1e-6;
                let fd = (arap_loss(&c, &p, 4).unwrap().0 - arap_loss(&c, &m, 4).unwrap().0) / 2e-6;
                assert!((fd - g[i][a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rotation_smoothness_cases() {
        let constant = vec![vec![[0.1, 0.2, 0.0, -0.3]; 3]; 4];
        assert_eq!(rot_loss_from_offsets(&constant).unwrap().0, 0.0);
        let zero = vec![vec![[0.0; 4]; 3]; 2];
        assert_eq!(rot_loss_from_offsets(&zero).unwrap().0, 0.0);
        let delta = [0.1, -0.2, 0.05, 0.0];
        let neg = delta.map(|v| -v);
        let alt = vec![vec![delta; 2], vec![neg; 2], vec![delta; 2]];
        let want: f64 = delta.iter().map(|v| (2.0 * v) * (2.0 * v)).sum();
        assert!((rot_loss_from_offsets(&alt).unwrap().0 - want).abs() < 1e-12);
        assert!(rot_loss_from_offsets(&zero[..1]).is_err());
    }
}
