//! Loss, optimizer, schedule, gradient checks, synthetic data and the
//! training loop.

pub mod gradcheck;
mod loss;
mod metrics;
mod optim;
pub mod synth;
mod train;

pub use loss::{cross_entropy, IGNORE_LABEL};
pub use metrics::ConfusionMatrix;
pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimState, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
pub use train::{
    augment, batch_loss, evaluate, stack_scenes, subsample, train_loop, train_step, Batch, EpochMetrics, TrainConfig,
    DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_MAX_POINTS,
};
