//! Finite-difference checks of the velocity field's reverse pass.

use fourd::model::{Conditioning, LatentGrid, LatentShape, ModelConfig, VelocityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL_F64: f64 = 1e-6;
const TOL_F32: f64 = 1e-3;

struct Instance {
    field: VelocityField<f64>,
    z: LatentGrid,
    tau: f64,
    cond: Conditioning,
    weights: LatentGrid,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        dim: 8,
        blocks: 2,
        heads: 2,
        patch: 1,
        channels: 3,
    };
    let mut field = VelocityField::<f64>::zeros(cfg).unwrap();
    // every group nonzero, including the zero-initialised ones
    for e in field.params.entries().to_vec() {
        let fan_in = *e.shape.last().unwrap() as f64;
        let bound = 1.0 / fan_in.sqrt();
        let id = field.params.id(&e.name).unwrap();
        for w in field.params.get_mut(id) {
            *w = rng.random_range(-bound..bound);
        }
    }
    let shape = LatentShape {
        n_views: 2,
        frames: 2,
        channels: 3,
        height: 4,
        width: 4,
    };
    let rand_grid = |rng: &mut ChaCha8Rng| {
        LatentGrid::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let z = rand_grid(&mut rng);
    let condition = rand_grid(&mut rng);
    let weights = rand_grid(&mut rng);
    let cams = (0..2)
        .map(|_| {
            let mut c = [0.0; 12];
            c.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            c
        })
        .collect();
    Instance {
        field,
        z,
        tau: 0.37,
        cond: Conditioning::new(condition, cams).unwrap(),
        weights,
    }
}

fn loss(field: &VelocityField<f64>, z: &LatentGrid, inst: &Instance) -> f64 {
    let v = field.forward(z, inst.tau, &inst.cond).unwrap();
    v.values.iter().zip(&inst.weights.values).map(|(a, b)| a * b).sum()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let num = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let den = numeric.iter().map(|b| b.abs()).fold(0.0, f64::max).max(1e-12);
    num / den
}

/// Central differences of the f64 forward pass, per parameter group, plus
/// the input gradient.
fn numeric_gradients(inst: &Instance) -> (Vec<(String, Vec<f64>)>, Vec<f64>) {
    let mut field = inst.field.clone();
    let mut groups = Vec::new();
    for e in inst.field.params.entries().to_vec() {
        let mut g = Vec::with_capacity(e.len);
        for k in 0..e.len {
            let idx = e.offset + k;
            let orig = field.params.as_slice()[idx];
            field.params.as_mut_slice()[idx] = orig + H;
            let lp = loss(&field, &inst.z, inst);
            field.params.as_mut_slice()[idx] = orig - H;
            let lm = loss(&field, &inst.z, inst);
            field.params.as_mut_slice()[idx] = orig;
            g.push((lp - lm) / (2.0 * H));
        }
        groups.push((e.name.clone(), g));
    }
    let mut z = inst.z.clone();
    let mut gz = Vec::with_capacity(z.values.len());
    for i in 0..z.values.len() {
        let orig = z.values[i];
        z.values[i] = orig + H;
        let lp = loss(&inst.field, &z, inst);
        z.values[i] = orig - H;
        let lm = loss(&inst.field, &z, inst);
        z.values[i] = orig;
        gz.push((lp - lm) / (2.0 * H));
    }
    (groups, gz)
}

fn worst_errors<T: fourd::Real>(inst: &Instance, numeric: &(Vec<(String, Vec<f64>)>, Vec<f64>)) -> (String, f64, f64) {
    let field: VelocityField<T> = inst.field.cast();
    let (_, tape) = field.forward_with_tape(&inst.z, inst.tau, &inst.cond).unwrap();
    let grads = field.backward(&tape, &inst.weights).unwrap();
    let analytic: Vec<f64> = grads.params.iter().map(|v| v.to_f64_lossy()).collect();
    let mut worst = (String::new(), 0.0);
    for (e, (name, g)) in field.params.entries().iter().zip(&numeric.0) {
        let err = rel_err(&analytic[e.offset..e.offset + e.len], g);
        if err > worst.1 {
            worst = (name.clone(), err);
        }
    }
    let input: Vec<f64> = grads.input.iter().map(|v| v.to_f64_lossy()).collect();
    (worst.0, worst.1, rel_err(&input, &numeric.1))
}

#[test]
fn parameter_and_input_gradients_match_finite_differences() {
    let inst = instance(11);
    let numeric = numeric_gradients(&inst);
    assert!(numeric.0.iter().all(|(_, g)| g.iter().any(|v| v.abs() > 1e-8)), "every group must be exercised");
    let (name, err, input_err) = worst_errors::<f64>(&inst, &numeric);
    assert!(err < TOL_F64, "f64 group {name}: relative error {err:e}");
    assert!(input_err < TOL_F64, "f64 input: relative error {input_err:e}");
    let (name, err, input_err) = worst_errors::<f32>(&inst, &numeric);
    assert!(err < TOL_F32, "f32 group {name}: relative error {err:e}");
    assert!(input_err < TOL_F32, "f32 input: relative error {input_err:e}");
}

#[test]
fn backward_is_deterministic() {
    let inst = instance(12);
    let run = || {
        let (_, tape) = inst.field.forward_with_tape(&inst.z, inst.tau, &inst.cond).unwrap();
        inst.field.backward(&tape, &inst.weights).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert_eq!(a.input, b.input);
}
