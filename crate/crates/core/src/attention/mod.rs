//! Fused view/time sparse attention.
//!
//! Tokens live on a `views × time × rows × cols` grid. The time axis holds
//! `2f` slots per view: `f` target frames followed by `f` condition frames.
//! Masks are stored per `(view, time)` slot pair because every spatial
//! position inside an allowed pair attends to every other one.

mod grid;
mod kernel;
mod mask;

pub use grid::{collapse_position, CollapsedPosition, GridIndex, TokenCoord};
pub use kernel::{
    attention_backward, attention_forward, dense_oracle_attention, dense_oracle_weights, masked_attention,
    AttentionProbs, Mat,
};
pub use mask::{build_mask, mask_density, FullMask, MaskReport, SlotMask, TVMask, ViewMask};
