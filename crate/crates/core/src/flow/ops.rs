use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conditioning, LatentGrid, LatentShape, VelocityField};

/// Velocity, input gradient and parameter gradient for one upstream signal.
#[derive(Debug, Clone)]
pub struct VelocityVjp {
    pub velocity: Vec<f64>,
    pub input_grad: Vec<f64>,
    pub param_grad: Vec<f64>,
}

/// A velocity field over flat latents.
pub trait FlowModel {
    fn velocity(&self, z: &[f64], tau: f64) -> Result<Vec<f64>>;

    /// Velocity plus the vector-Jacobian products of `upstream` with respect
    /// to the input and the parameters.
    fn velocity_vjp(&self, z: &[f64], tau: f64, upstream: &[f64]) -> Result<VelocityVjp>;
}

/// A [`VelocityField`] with its conditioning bound, acting on the flat
/// values of a target latent.
pub struct ConditionedField<'a> {
    pub field: &'a VelocityField<f64>,
    pub cond: &'a Conditioning,
}

impl ConditionedField<'_> {
    fn shape(&self) -> LatentShape {
        self.cond.condition.shape
    }

    fn wrap(&self, z: &[f64]) -> Result<LatentGrid> {
        LatentGrid::new(self.shape(), z.to_vec())
    }
}

impl FlowModel for ConditionedField<'_> {
    fn velocity(&self, z: &[f64], tau: f64) -> Result<Vec<f64>> {
        Ok(self.field.forward(&self.wrap(z)?, tau, self.cond)?.values)
    }

    fn velocity_vjp(&self, z: &[f64], tau: f64, upstream: &[f64]) -> Result<VelocityVjp> {
        let (v, tape) = self.field.forward_with_tape(&self.wrap(z)?, tau, self.cond)?;
        let g = self.field.backward(&tape, &self.wrap(upstream)?)?;
        Ok(VelocityVjp {
            velocity: v.values,
            input_grad: g.input,
            param_grad: g.params,
        })
    }
}

/// Sampling laws for flow time and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            tau_min: 0.0,
            tau_max: 1.0,
        }
    }
}

impl NoiseSchedule {
    pub fn sample_tau<R: Rng>(&self, rng: &mut R) -> f64 {
        self.tau_min + (self.tau_max - self.tau_min) * rng.random::<f64>()
    }

    pub fn sample_noise<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::input(format!("flow time {tau} is outside [0, 1]")));
    }
    Ok(())
}

/// `(1 - tau) z0 + tau eps`.
pub fn forward_interpolate(z0: &[f64], eps: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if z0.len() != eps.len() {
        return Err(Error::input(format!("data has {} values, noise {}", z0.len(), eps.len())));
    }
    Ok(z0.iter().zip(eps).map(|(&a, &b)| (1.0 - tau) * a + tau * b).collect())
}

/// One-step denoised estimate `z_tau - tau v`.
pub fn clean_estimate(z_tau: &[f64], tau: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if z_tau.len() != v.len() {
        return Err(Error::input("latent and velocity lengths differ"));
    }
    Ok(z_tau.iter().zip(v).map(|(z, v)| z - tau * v).collect())
}

#[derive(Debug, Clone)]
pub struct CfmOutput {
    pub loss: f64,
    pub velocity: Vec<f64>,
    pub param_grad: Vec<f64>,
}

/// `||v(z_tau, tau) - (eps - z0)||²` and its parameter gradient.
pub fn cfm_loss(model: &dyn FlowModel, z0: &[f64], tau: f64, eps: &[f64]) -> Result<CfmOutput> {
    let z_tau = forward_interpolate(z0, eps, tau)?;
    let target: Vec<f64> = eps.iter().zip(z0).map(|(e, z)| e - z).collect();
    let v = model.velocity(&z_tau, tau)?;
    let resid: Vec<f64> = v.iter().zip(&target).map(|(a, b)| a - b).collect();
    let upstream: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
    let vjp = model.velocity_vjp(&z_tau, tau, &upstream)?;
    Ok(CfmOutput {
        loss: resid.iter().map(|r| r * r).sum(),
        velocity: v,
        param_grad: vjp.param_grad,
    })
}

/// Integrate from `tau = 1` down to `0` with `n_steps` equal Euler steps.
pub fn euler_integrate(model: &dyn FlowModel, start: &[f64], n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::input("Euler sampling needs at least one step"));
    }
    let dt = 1.0 / n_steps as f64;
    let mut z = start.to_vec();
    for k in 0..n_steps {
        let tau = 1.0 - k as f64 * dt;
        let v = model.velocity(&z, tau)?;
        if v.len() != z.len() {
            return Err(Error::State("velocity length differs from the latent".into()));
        }
        for (a, b) in z.iter_mut().zip(&v) {
            *a -= b * dt;
        }
    }
    Ok(z)
}

/// Euler integration starting from seeded standard-normal noise of length `len`.
pub fn euler_sample(model: &dyn FlowModel, len: usize, n_steps: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NoiseSchedule::default().sample_noise(&mut rng, len);
    euler_integrate(model, &start, n_steps)
}
