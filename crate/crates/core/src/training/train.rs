use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::IGNORE_LABEL;
use super::metrics::ConfusionMatrix;
use super::optim::{adamw_step, cosine_lr, AdamWConfig, OptimState};
use crate::geometry::{voxelize, VoxelCoord, VoxelScene};
use crate::network::Model;
use crate::ops::{NormMode, NORM_MOMENTUM};
use crate::tape::Tape;
use crate::{Error, Matrix, PointCloud, Result, SparseTensor};

pub const DEFAULT_EPOCHS: usize = 40;
pub const DEFAULT_BATCH: usize = 4;
pub const DEFAULT_MAX_POINTS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch: usize,
    /// Each training scene is randomly subsampled to at most this many points.
    pub max_points: usize,
    pub optim: AdamWConfig,
    /// Random x/y flips and a uniform scale in `[0.9, 1.1]`.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            max_points: DEFAULT_MAX_POINTS,
            optim: AdamWConfig::default(),
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.max_points == 0 {
            return Err(Error::Config("epochs, batch and max points must be positive".into()));
        }
        if !(self.optim.lr.is_finite() && self.optim.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.optim.lr)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, scenes: usize) -> usize {
        scenes.div_ceil(self.batch)
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: u64,
    /// Learning rate the schedule gives for the next step.
    pub lr: f64,
    pub train_loss: f64,
    pub eval_acc: f64,
    pub eval_miou: f64,
}

/// Several voxelized scenes stacked into one tensor, one batch index each.
#[derive(Clone, Debug)]
pub struct Batch {
    pub tensor: SparseTensor<f32>,
    pub labels: Vec<u16>,
}

pub fn stack_scenes(scenes: &[VoxelScene]) -> Result<Batch> {
    let mut coords = Vec::new();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let d = scenes.first().map(|s| s.tensor.channels()).ok_or(Error::EmptyInput)?;
    for (b, s) in scenes.iter().enumerate() {
        if s.tensor.channels() != d {
            return Err(Error::Shape(format!("scene {b} has {} channels, expected {d}", s.tensor.channels())));
        }
        coords.extend(s.tensor.coords().iter().map(|c| VoxelCoord::new(b as u32, c.x, c.y, c.z)));
        feats.extend_from_slice(s.tensor.features().as_slice());
        match &s.labels {
            Some(l) => labels.extend_from_slice(l),
            None => labels.extend(core::iter::repeat_n(IGNORE_LABEL, s.tensor.len())),
        }
    }
    let n = coords.len();
    // Batch index is the leading sort key, so the stacked order is canonical.
    Ok(Batch { tensor: SparseTensor::new(coords, Matrix::from_vec(n, d, feats), 1)?, labels })
}

/// Flips and rescales around the cloud's bounding-box center.
pub fn augment<R: Rng>(pc: &PointCloud, rng: &mut R) -> PointCloud {
    let flip = [rng.random::<bool>(), rng.random::<bool>()];
    let scale = rng.random_range(0.9..=1.1);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pc.positions() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mid: Vec<f64> = (0..3).map(|a| 0.5 * (lo[a] + hi[a])).collect();
    let mut out = pc.clone();
    for p in out.positions_mut() {
        for a in 0..3 {
            let mut v = p[a] - mid[a];
            if a < 2 && flip[a] {
                v = -v;
            }
            p[a] = mid[a] + scale * v;
        }
    }
    out
}

/// Random subset of at most `max` points, kept in original order.
pub fn subsample<R: Rng>(pc: &PointCloud, max: usize, rng: &mut R) -> PointCloud {
    if pc.len() <= max {
        return pc.clone();
    }
    let mut idx = rand::seq::index::sample(rng, pc.len(), max).into_vec();
    idx.sort_unstable();
    pc.select(&idx)
}

/// Accuracy and mIoU over `scenes`, one scene per forward pass.
pub fn evaluate(model: &Model<f32>, scenes: &[VoxelScene]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config.num_classes);
    for s in scenes {
        let Some(labels) = &s.labels else { continue };
        let preds = model.classify(&s.tensor)?;
        cm.add(&preds, labels)?;
    }
    Ok(cm)
}

/// Loss of one batch in training mode, without touching the parameters.
pub fn batch_loss(model: &Model<f32>, batch: &Batch) -> Result<f64> {
    let topo = model.topology(batch.tensor.coords())?;
    let mut tape = Tape::inference();
    let out = model.forward(&mut tape, &batch.tensor, &topo, NormMode::Train)?;
    let (loss, _) = super::loss::cross_entropy(out.logits.value(), &batch.labels)?;
    Ok(loss as f64)
}

/// Forward, backward, running-statistics update and one AdamW step.
/// Returns the batch loss before the step.
pub fn train_step(model: &mut Model<f32>, state: &mut OptimState<f32>, batch: &Batch, lr: f64) -> Result<f64> {
    let topo = model.topology(batch.tensor.coords())?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batch.tensor, &topo, NormMode::Train)?;
    let loss = tape.cross_entropy(&out.logits, Arc::from(batch.labels.as_slice()))?;
    let value = loss.value().get(0, 0) as f64;
    if !value.is_finite() {
        return Err(Error::Numeric("training loss is not finite"));
    }
    let grads = tape.backward(&loss)?;
    let stats = tape.take_batch_stats();
    drop(out);
    model.params.zero_grad();
    model.params.accumulate(&grads);
    drop(grads);
    adamw_step(&mut model.params, state, lr);
    model.params.apply_batch_stats(&stats, NORM_MOMENTUM);
    Ok(value)
}

/// Trains on `train` clouds and evaluates on `eval` scenes after every
/// epoch. `on_epoch` sees each metrics record as soon as it exists.
pub fn train_loop<F: FnMut(&EpochMetrics)>(
    model: &mut Model<f32>,
    train: &[PointCloud],
    eval: &[VoxelScene],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    model.config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimState::new(&model.params, cfg.optim);
    let total = (cfg.epochs * cfg.steps_per_epoch(train.len())) as u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let scenes = chunk
                .iter()
                .map(|&i| {
                    let pc = if cfg.augment { augment(&train[i], &mut rng) } else { train[i].clone() };
                    voxelize(&subsample(&pc, cfg.max_points, &mut rng), model.config.voxel_size)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = stack_scenes(&scenes)?;
            let lr = cosine_lr(state.step, total, cfg.optim.lr);
            loss_sum += train_step(model, &mut state, &batch, lr)?;
            steps += 1;
        }
        let cm = evaluate(model, eval)?;
        let m = EpochMetrics {
            epoch,
            step: state.step,
            lr: cosine_lr(state.step, total, cfg.optim.lr),
            train_loss: loss_sum / steps as f64,
            eval_acc: cm.accuracy(),
            eval_miou: cm.miou(),
        };
        on_epoch(&m);
        log.push(m);
    }
    Ok(log)
}
