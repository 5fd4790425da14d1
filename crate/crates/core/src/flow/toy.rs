use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ops::{FlowModel, VelocityVjp};
use crate::error::{Error, Result};
use crate::model::{linear, linear_backward};
use crate::params::{ParamId, ParamStore};

const TIME_HARMONICS: usize = 4;
const IN_DIM: usize = 2 + 1 + 2 * TIME_HARMONICS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyDataset {
    /// Point mass at `(3, -1)`.
    Point,
    /// Standard normal.
    Gauss,
    /// Equal mixture of `N((±2, 0), 0.3²)`.
    Mixture,
}

impl std::str::FromStr for ToyDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Self::Point),
            "gauss" => Ok(Self::Gauss),
            "mixture" => Ok(Self::Mixture),
            other => Err(Error::input(format!("unknown toy dataset '{other}'"))),
        }
    }
}

pub fn toy_dataset(kind: ToyDataset, n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match kind {
            ToyDataset::Point => [3.0, -1.0],
            ToyDataset::Gauss => [rng.sample(StandardNormal), rng.sample(StandardNormal)],
            ToyDataset::Mixture => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                [2.0 * sign + 0.3 * dx, 0.3 * dy]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 1e-2,
            batch: 64,
        }
    }
}

/// Two-hidden-layer SiLU network `(x, y, tau) -> velocity`.
#[derive(Debug, Clone)]
pub struct ToyMlp {
    pub hidden: usize,
    pub params: ParamStore<f64>,
    ids: [ParamId; 6],
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

struct ToyCache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
}

fn features(x: f64, y: f64, tau: f64, out: &mut Vec<f64>) {
    out.extend_from_slice(&[x, y, tau]);
    for k in 1..=TIME_HARMONICS {
        let a = std::f64::consts::PI * k as f64 * tau;
        out.push(a.sin());
        out.push(a.cos());
    }
}

impl ToyMlp {
    pub fn new(hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::input("toy network needs a hidden width"));
        }
        let mut p = ParamStore::new();
        let ids = [
            p.add("fc1.weight", &[hidden, IN_DIM]),
            p.add("fc1.bias", &[hidden]),
            p.add("fc2.weight", &[hidden, hidden]),
            p.add("fc2.bias", &[hidden]),
            p.add("out.weight", &[2, hidden]),
            p.add("out.bias", &[2]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &id in &[ids[0], ids[2], ids[4]] {
            let bound = 1.0 / (*p.entry(id).shape.last().expect("weight") as f64).sqrt();
            for w in p.get_mut(id) {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { hidden, params: p, ids })
    }

    fn forward_batch(&self, z: &[f64], taus: &[f64]) -> (Vec<f64>, ToyCache) {
        let n = taus.len();
        let h = self.hidden;
        let p = &self.params;
        let mut input = Vec::with_capacity(n * IN_DIM);
        for i in 0..n {
            features(z[2 * i], z[2 * i + 1], taus[i], &mut input);
        }
        let pre1 = linear(&input, n, IN_DIM, p.get(self.ids[0]), Some(p.get(self.ids[1])), h);
        let act1: Vec<f64> = pre1.iter().map(|&x| silu(x)).collect();
        let pre2 = linear(&act1, n, h, p.get(self.ids[2]), Some(p.get(self.ids[3])), h);
        let act2: Vec<f64> = pre2.iter().map(|&x| silu(x)).collect();
        let out = linear(&act2, n, h, p.get(self.ids[4]), Some(p.get(self.ids[5])), 2);
        (
            out,
            ToyCache {
                input,
                pre1,
                act1,
                pre2,
                act2,
            },
        )
    }

    /// Returns `(input_grad, param_grad)`.
    fn backward_batch(&self, c: &ToyCache, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = dout.len() / 2;
        let h = self.hidden;
        let p = &self.params;
        let mut g = p.zeros_like();
        let span = |id: ParamId| {
            let e = p.entry(id);
            e.offset..e.offset + e.len
        };
        let mut db = vec![0.0; 2];
        let da2 = linear_backward(&c.act2, dout, n, h, 2, p.get(self.ids[4]), &mut g[span(self.ids[4])], Some(&mut db));
        g[span(self.ids[5])].copy_from_slice(&db);
        let dp2: Vec<f64> = da2.iter().zip(&c.pre2).map(|(g, &x)| g * silu_grad(x)).collect();
        let mut db = vec![0.0; h];
        let da1 = linear_backward(&c.act1, &dp2, n, h, h, p.get(self.ids[2]), &mut g[span(self.ids[2])], Some(&mut db));
        g[span(self.ids[3])].copy_from_slice(&db);
        let dp1: Vec<f64> = da1.iter().zip(&c.pre1).map(|(g, &x)| g * silu_grad(x)).collect();
        let mut db = vec![0.0; h];
        let din = linear_backward(&c.input, &dp1, n, IN_DIM, h, p.get(self.ids[0]), &mut g[span(self.ids[0])], Some(&mut db));
        g[span(self.ids[1])].copy_from_slice(&db);
        let mut dz = Vec::with_capacity(2 * n);
        for i in 0..n {
            dz.push(din[i * IN_DIM]);
            dz.push(din[i * IN_DIM + 1]);
        }
        (dz, g)
    }

    fn check(z: &[f64]) -> Result<()> {
        if z.len() % 2 != 0 {
            return Err(Error::input("toy latents are flat lists of 2-d points"));
        }
        Ok(())
    }
}

impl FlowModel for ToyMlp {
    fn velocity(&self, z: &[f64], tau: f64) -> Result<Vec<f64>> {
        Self::check(z)?;
        Ok(self.forward_batch(z, &vec![tau; z.len() / 2]).0)
    }

    fn velocity_vjp(&self, z: &[f64], tau: f64, upstream: &[f64]) -> Result<VelocityVjp> {
        Self::check(z)?;
        let (velocity, cache) = self.forward_batch(z, &vec![tau; z.len() / 2]);
        let (input_grad, param_grad) = self.backward_batch(&cache, upstream);
        Ok(VelocityVjp {
            velocity,
            input_grad,
            param_grad,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ToyTraining {
    pub model: ToyMlp,
    /// Mean per-sample flow-matching loss of every step.
    pub losses: Vec<f64>,
}

/// Plain SGD on the flow-matching loss with seeded mini-batches; each sample
/// gets its own `tau` and noise. One epoch is `len / batch` steps.
pub fn train_toy(dataset: &[[f64; 2]], epochs: usize, seed: u64, config: &ToyConfig) -> Result<ToyTraining> {
    if dataset.is_empty() {
        return Err(Error::input("toy dataset is empty"));
    }
    if config.batch == 0 || !(config.lr > 0.0) {
        return Err(Error::input("toy training needs a positive batch size and learning rate"));
    }
    let mut model = ToyMlp::new(config.hidden, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_70e5);
    let steps_per_epoch = (dataset.len() / config.batch).max(1);
    let b = config.batch;
    let mut losses = Vec::with_capacity(epochs * steps_per_epoch);
    let mut z = vec![0.0; 2 * b];
    let mut target = vec![0.0; 2 * b];
    let mut taus = vec![0.0; b];
    for _ in 0..epochs * steps_per_epoch {
        for i in 0..b {
            let x = dataset[rng.random_range(0..dataset.len())];
            let tau: f64 = rng.random();
            taus[i] = tau;
            for k in 0..2 {
                let e: f64 = rng.sample(StandardNormal);
                z[2 * i + k] = (1.0 - tau) * x[k] + tau * e;
                target[2 * i + k] = e - x[k];
            }
        }
        let (v, cache) = model.forward_batch(&z, &taus);
        let mut loss = 0.0;
        let dout: Vec<f64> = v
            .iter()
            .zip(&target)
            .map(|(a, t)| {
                let r = a - t;
                loss += r * r;
                2.0 * r / b as f64
            })
            .collect();
        losses.push(loss / b as f64);
        let (_, g) = model.backward_batch(&cache, &dout);
        for (w, g) in model.params.as_mut_slice().iter_mut().zip(&g) {
            *w -= config.lr * g;
        }
    }
    Ok(ToyTraining { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vjp_matches_finite_differences() {
        let m = ToyMlp::new(16, 3).unwrap();
        let z = [0.3, -1.2, 2.0, 0.5];
        let up = [0.7, -0.4, 1.1, 0.2];
        let tau = 0.6;
        let vjp = m.velocity_vjp(&z, tau, &up).unwrap();
        let loss = |m: &ToyMlp, z: &[f64]| -> f64 { m.velocity(z, tau).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
        let h = 1e-6;
        for i in 0..4 {
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[i] += h;
            zm[i] -= h;
            let fd = (loss(&m, &zp) - loss(&m, &zm)) / (2.0 * h);
            assert!((fd - vjp.input_grad[i]).abs() < 1e-7);
        }
        let mut mp = m.clone();
        for idx in (0..m.params.len()).step_by(37) {
            let orig = mp.params.as_slice()[idx];
            mp.params.as_mut_slice()[idx] = orig + h;
            let lp = loss(&mp, &z);
            mp.params.as_mut_slice()[idx] = orig - h;
            let lm = loss(&mp, &z);
            mp.params.as_mut_slice()[idx] = orig;
            assert!(((lp - lm) / (2.0 * h) - vjp.param_grad[idx]).abs() < 1e-7, "param {idx}");
        }
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(train_toy(&[], 1, 0, &ToyConfig::default()).is_err());
    }
}
