//! Finite-difference checks of the rasterizer's reverse pass.

use fourd::splat::{rasterize, rasterize_backward, RasterConfig, Splat};
use fourd::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 16;
const H_IMG: usize = 16;
const H: f64 = 1e-4;
const TOL_F64: f64 = 1e-6;
const TOL_F32: f64 = 1e-3;
const PARAMS: usize = 9;

fn instance(seed: u64) -> (Vec<Splat<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = (0..5)
        .map(|k| {
            let a: f64 = rng.random_range(4.0..12.0);
            let c: f64 = rng.random_range(4.0..12.0);
            let b = rng.random_range(-0.5..0.5) * (a * c).sqrt();
            Splat {
                mean: [rng.random_range(3.0..13.0), rng.random_range(3.0..13.0)],
                cov: [a, b, c],
                depth: 1.0 + k as f64,
                opacity: rng.random_range(0.3..0.85),
                color: [rng.random(), rng.random(), rng.random()],
            }
        })
        .collect();
    let weights = (0..W * H_IMG * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    (splats, weights)
}

fn get(s: &mut Splat<f64>, k: usize) -> &mut f64 {
    match k {
        0 | 1 => &mut s.mean[k],
        2..=4 => &mut s.cov[k - 2],
        5 => &mut s.opacity,
        _ => &mut s.color[k - 6],
    }
}

fn loss(splats: &[Splat<f64>], weights: &[f64]) -> f64 {
    let out = rasterize(splats, W, H_IMG, &RasterConfig::exact());
    out.color.iter().zip(weights).map(|(a, b)| a * b).sum()
}

fn numeric(splats: &[Splat<f64>], weights: &[f64]) -> Vec<[f64; PARAMS]> {
    let mut s = splats.to_vec();
    (0..s.len())
        .map(|i| {
            let mut g = [0.0; PARAMS];
            for (k, gk) in g.iter_mut().enumerate() {
                let orig = *get(&mut s[i], k);
                *get(&mut s[i], k) = orig + H;
                let lp = loss(&s, weights);
                *get(&mut s[i], k) = orig - H;
                let lm = loss(&s, weights);
                *get(&mut s[i], k) = orig;
                *gk = (lp - lm) / (2.0 * H);
            }
            g
        })
        .collect()
}

/// Worst normwise relative error over the groups mean, cov, opacity, color.
fn worst_error<T: Real>(splats: &[Splat<f64>], weights: &[f64], num: &[[f64; PARAMS]]) -> f64 {
    let cast = |v: f64| T::lit(v);
    let ts: Vec<Splat<T>> = splats
        .iter()
        .map(|s| Splat {
            mean: s.mean.map(cast),
            cov: s.cov.map(cast),
            depth: cast(s.depth),
            opacity: cast(s.opacity),
            color: s.color.map(cast),
        })
        .collect();
    let tw: Vec<T> = weights.iter().map(|&w| cast(w)).collect();
    let grads = rasterize_backward(&ts, W, H_IMG, &RasterConfig::exact(), &tw);
    let analytic: Vec<[f64; PARAMS]> = grads
        .iter()
        .map(|g| {
            let mut a = [0.0; PARAMS];
            a[0] = g.mean[0].to_f64_lossy();
            a[1] = g.mean[1].to_f64_lossy();
            for k in 0..3 {
                a[2 + k] = g.cov[k].to_f64_lossy();
                a[6 + k] = g.color[k].to_f64_lossy();
            }
            a[5] = g.opacity.to_f64_lossy();
            a
        })
        .collect();
    let mut worst: f64 = 0.0;
    for range in [0..2, 2..5, 5..6, 6..9] {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (a, n) in analytic.iter().zip(num) {
            for k in range.clone() {
                diff = diff.max((a[k] - n[k]).abs());
                scale = scale.max(n[k].abs());
            }
        }
        assert!(scale > 1e-6, "group {range:?} not exercised");
        worst = worst.max(diff / scale);
    }
    worst
}

#[test]
fn rasterizer_gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let (splats, weights) = instance(seed);
        let num = numeric(&splats, &weights);
        let e64 = worst_error::<f64>(&splats, &weights, &num);
        assert!(e64 < TOL_F64, "seed {seed}: f64 relative error {e64:e}");
        let e32 = worst_error::<f32>(&splats, &weights, &num);
        assert!(e32 < TOL_F32, "seed {seed}: f32 relative error {e32:e}");
    }
}

#[test]
fn default_config_gradients_are_finite_and_deterministic() {
    let (splats, weights) = instance(4);
    let cfg = RasterConfig::default();
    let a = rasterize_backward(&splats, W, H_IMG, &cfg, &weights);
    let b = rasterize_backward(&splats, W, H_IMG, &cfg, &weights);
    assert_eq!(a, b);
    assert!(a.iter().all(|g| g.mean.iter().chain(&g.cov).chain(&g.color).all(|v| v.is_finite())));
}
