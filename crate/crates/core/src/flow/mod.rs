//! Rectified flow: straight-path interpolation between data (`tau = 0`) and
//! Gaussian noise (`tau = 1`), the flow-matching regression loss, an Euler
//! sampler and the flow-matching distillation loss used to regularise
//! renders.

mod fmd;
mod ops;
mod toy;

pub use fmd::{fmd_loss, FmdConfig, FmdGradient, FmdOutput, Reduction, TauSampler, Weighting};
pub use ops::{
    cfm_loss, clean_estimate, euler_integrate, euler_sample, forward_interpolate, CfmOutput, ConditionedField,
    FlowModel, NoiseSchedule, VelocityVjp,
};
pub use toy::{toy_dataset, train_toy, ToyConfig, ToyDataset, ToyMlp, ToyTraining};
