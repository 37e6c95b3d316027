//! Differentiable primitives.
//!
//! Each op comes as a plain function over matrices or sparse tensors and as a
//! [`Tape`](crate::tape::Tape) method that records its backward rule.

mod activation;
mod basic;
mod conv;
mod grid;
mod layers;
mod linear;
mod norm;
mod params;
mod upsample;

pub use activation::relu;
pub use conv::{sparse_conv, strided_conv, submanifold_conv};
pub use grid::{
    broadcast_mix, grid_avg_pool, grid_depthwise, row_softmax, segment_softmax,
};
pub use layers::{uniform_init, ConvLayer, Ctx, Init, LinearLayer, NormLayer, NormMode, ProjLayer};
pub use linear::linear;
pub use norm::{normalize, NormStats, NORM_EPS, NORM_MOMENTUM};
pub use params::{ModelParams, ParamId, ParamKind, ParamTensor};
pub use upsample::{parent_index, parent_upsample};
