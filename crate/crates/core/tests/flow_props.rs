//! Flow identities and the distillation gradient.

use fourd::flow::{
    clean_estimate, fmd_loss, forward_interpolate, ConditionedField, FmdConfig, FmdGradient, Reduction, TauSampler,
};
use fourd::model::{Conditioning, LatentGrid, LatentShape, ModelConfig, VelocityField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn clean_estimate_inverts_interpolation(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..16),
        tau in 0.0f64..=1.0,
    ) {
        let (z0, eps): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let zt = forward_interpolate(&z0, &eps, tau).unwrap();
        let v: Vec<f64> = eps.iter().zip(&z0).map(|(e, z)| e - z).collect();
        let back = clean_estimate(&zt, tau, &v).unwrap();
        for (a, b) in back.iter().zip(&z0) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs().max(10.0)));
        }
    }

    #[test]
    fn endpoints_are_bit_exact(
        pairs in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..16),
    ) {
        let (z0, eps): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert_eq!(forward_interpolate(&z0, &eps, 0.0).unwrap(), z0.clone());
        prop_assert_eq!(forward_interpolate(&z0, &eps, 1.0).unwrap(), eps);
    }
}

fn micro_field(seed: u64) -> (VelocityField<f64>, Conditioning, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        dim: 8,
        blocks: 1,
        heads: 2,
        patch: 1,
        channels: 1,
    };
    let mut field = VelocityField::<f64>::new(cfg, seed).unwrap();
    for name in ["blocks.0.fused_proj.weight", "blocks.0.camera_encoder.weight"] {
        for w in field.params.by_name_mut(name).unwrap() {
            *w = rng.random_range(-0.3..0.3);
        }
    }
    let shape = LatentShape {
        n_views: 1,
        frames: 1,
        channels: 1,
        height: 2,
        width: 2,
    };
    let cond = Conditioning::new(
        LatentGrid::new(shape, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        vec![[0.1; 12]],
    )
    .unwrap();
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    (field, cond, x)
}

#[test]
fn fmd_gradient_matches_finite_differences() {
    let (field, cond, x) = micro_field(2);
    let model = ConditionedField { field: &field, cond: &cond };
    for reduction in [Reduction::Sum, Reduction::Mean] {
        let cfg = FmdConfig {
            tau: TauSampler::Uniform { min: 0.05, max: 0.95 },
            reduction,
            ..Default::default()
        };
        for seed in 0..5 {
            let out = fmd_loss(&x, &model, &cfg, seed).unwrap();
            let h = 1e-4;
            let mut numeric = Vec::new();
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let lp = fmd_loss(&xp, &model, &cfg, seed).unwrap().loss;
                let lm = fmd_loss(&xm, &model, &cfg, seed).unwrap().loss;
                numeric.push((lp - lm) / (2.0 * h));
            }
            let err = out.grad.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = numeric.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(err / scale < 1e-5, "seed {seed}: {:?} vs {numeric:?}", out.grad);
        }
    }
}

#[test]
fn stop_gradient_variant_treats_estimate_as_target() {
    let (field, cond, x) = micro_field(3);
    let model = ConditionedField { field: &field, cond: &cond };
    let cfg = FmdConfig {
        tau: TauSampler::Fixed(0.4),
        gradient: FmdGradient::StopGradient,
        ..Default::default()
    };
    let out = fmd_loss(&x, &model, &cfg, 1).unwrap();
    for i in 0..4 {
        assert!((out.grad[i] + 2.0 * (out.clean[i] - x[i])).abs() < 1e-12);
    }
    let full = fmd_loss(&x, &model, &FmdConfig { gradient: FmdGradient::Full, ..cfg }, 1).unwrap();
    assert_eq!(full.loss, out.loss);
}
