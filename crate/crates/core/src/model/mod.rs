//! Micro multi-view denoising transformer.
//!
//! Target latents and their projection-guide condition latents are patched
//! into tokens, concatenated along time (target slots first), and stacked
//! across views. Each block runs per-view self-attention, adds a camera
//! embedding, then runs a fused view/time attention copy whose output goes
//! through a zero-initialised projector.

mod field;
mod latent;
mod layers;

pub use field::{
    encode_camera, CameraEmbedding, Conditioning, Gradients, ModelConfig, Tape, VelocityField, TIME_FEATURES,
};
pub use latent::{detokenize, tokenize, LatentGrid, LatentShape, TokenSequence};
pub use layers::{gelu, gelu_grad, positional_encoding, time_features};
pub(crate) use layers::{linear, linear_backward};
