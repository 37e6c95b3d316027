//! Encoder/decoder assembly and the named model variants.

mod config;
mod model;

pub use config::{default_grid_sizes, ModelConfig, Variant, DEFAULT_CHANNELS, DEFAULT_SEED, MAX_STAGES};
pub use model::{
    block_forward, decoder_forward, encoder_forward, model_forward, BlockLayout, ForwardOutput, Model, ModelLayout,
    StageLayout, StageTopology, Topology,
};
