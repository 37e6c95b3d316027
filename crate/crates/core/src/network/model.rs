use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::aggregator::{aggregate, AggregatorParams};
use crate::arconv::ARConvScaleParams;
use crate::geometry::{partition, GridPartition, VoxelCoord};
use crate::ops::{parent_index, ConvLayer, Ctx, Init, LinearLayer, ModelParams, NormMode};
use crate::sparse::{build_strided_map, build_submanifold_map, KernelMap, DEFAULT_KERNEL_SIZE};
use crate::tape::{Tape, Var};
use crate::{Error, Matrix, Result, Scalar, SparseTensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub scales: Vec<ARConvScaleParams>,
    pub aggregator: AggregatorParams,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLayout {
    pub blocks: Vec<BlockLayout>,
    /// Strided conv to the next stage; absent on the last stage.
    pub down: Option<ConvLayer>,
}

/// Parameter handles for the whole network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub stem: ConvLayer,
    pub stages: Vec<StageLayout>,
    /// `decoder[s]` maps `[stage s+1 ++ skip s]` to the width of stage `s`.
    pub decoder: Vec<LinearLayer>,
    pub head: LinearLayer,
}

impl ModelLayout {
    /// Registers every tensor in a fixed order from `cfg.seed`.
    pub fn register<T: Scalar>(cfg: &ModelConfig, params: &mut ModelParams<T>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vol = (DEFAULT_KERNEL_SIZE as usize).pow(3);
        let c = &cfg.channels_per_stage;
        let stem = ConvLayer::register(params, &mut rng, "stem", vol, cfg.in_channels, c[0], Init::FanIn)?;
        let mut stages = Vec::with_capacity(cfg.stages());
        for s in 0..cfg.stages() {
            let d = c[s];
            let grids = cfg.effective_grid_sizes(s);
            let mut blocks = Vec::with_capacity(cfg.blocks_per_stage[s]);
            for b in 0..cfg.blocks_per_stage[s] {
                let name = format!("stage{s}.block{b}");
                let scales = (0..grids.len())
                    .map(|k| ARConvScaleParams::register(params, &mut rng, &format!("{name}.arconv{k}"), d))
                    .collect::<Result<Vec<_>>>()?;
                let aggregator = AggregatorParams::register(
                    params,
                    &mut rng,
                    &format!("{name}.agg"),
                    d,
                    &grids,
                    cfg.adaptive_aggregator,
                )?;
                let conv1 = ConvLayer::register(params, &mut rng, &format!("{name}.conv1"), vol, d, d, Init::FanIn)?;
                let conv2 = ConvLayer::register(params, &mut rng, &format!("{name}.conv2"), vol, d, d, Init::FanIn)?;
                blocks.push(BlockLayout { scales, aggregator, conv1, conv2 });
            }
            let down = if s + 1 < cfg.stages() {
                Some(ConvLayer::register(params, &mut rng, &format!("stage{s}.down"), 8, d, c[s + 1], Init::FanIn)?)
            } else {
                None
            };
            stages.push(StageLayout { blocks, down });
        }
        let mut decoder = Vec::new();
        for s in 0..cfg.stages() - 1 {
            decoder.push(LinearLayer::register(
                params,
                &mut rng,
                &format!("decoder{s}"),
                c[s + 1] + c[s],
                c[s],
                true,
                Init::FanIn,
            )?);
        }
        let head = LinearLayer::register(params, &mut rng, "head", c[0], cfg.num_classes, true, Init::FanIn)?;
        Ok(Self { stem, stages, decoder, head })
    }
}

/// Coordinates, kernel maps and partitions of one stage.
#[derive(Clone, Debug)]
pub struct StageTopology {
    pub coords: Arc<[VoxelCoord]>,
    pub stride: u32,
    pub subm: Arc<KernelMap>,
    /// One partition per grid size used at this stage.
    pub parts: Vec<Arc<GridPartition>>,
    /// Map to the next stage.
    pub down: Option<Arc<KernelMap>>,
    /// For each voxel of this stage, its parent row at the next stage.
    pub parents: Option<Arc<[u32]>>,
}

/// Everything about the network's evaluation that depends only on the input
/// coordinates. The stem shares stage 0's submanifold map.
#[derive(Clone, Debug)]
pub struct Topology {
    pub stages: Vec<StageTopology>,
}

impl Topology {
    pub fn build(coords: &[VoxelCoord], cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if coords.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut stages: Vec<StageTopology> = Vec::with_capacity(cfg.stages());
        let mut cur: Arc<[VoxelCoord]> = coords.into();
        for s in 0..cfg.stages() {
            let stride = cfg.stride(s);
            let subm = Arc::new(build_submanifold_map(&cur, stride, DEFAULT_KERNEL_SIZE)?);
            let parts = cfg
                .effective_grid_sizes(s)
                .iter()
                .map(|&g| {
                    let abs = g.checked_mul(stride).ok_or(Error::InvalidGridSize { grid: g, stride })?;
                    Ok(Arc::new(partition(&cur, stride, abs)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (down, parents, next) = if s + 1 < cfg.stages() {
                let map = Arc::new(build_strided_map(&cur, stride)?);
                let next: Arc<[VoxelCoord]> = map.out_coords().into();
                let parents: Arc<[u32]> = parent_index(&cur, &next, map.out_stride())?.into();
                (Some(map), Some(parents), Some(next))
            } else {
                (None, None, None)
            };
            stages.push(StageTopology { coords: cur.clone(), stride, subm, parts, down, parents });
            if let Some(n) = next {
                cur = n;
            }
        }
        Ok(Self { stages })
    }

    pub fn occupancy(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.coords.len()).collect()
    }
}

/// `y = x + conv2(conv1(fuse(x)))`, each conv followed by norm and ReLU.
/// Also returns the block's per-voxel scale preferences.
pub fn block_forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    block: &BlockLayout,
    topo: &StageTopology,
    residual: bool,
) -> Result<(Var<T>, Var<T>)> {
    if x.cols() != block.conv1.d_in {
        return Err(Error::Shape(format!("block expects {} channels, got {}", block.conv1.d_in, x.cols())));
    }
    let (h, prefs) = aggregate(ctx, x, &topo.parts, &block.scales, &block.aggregator)?;
    let h = block.conv1.forward(ctx, &h, &topo.subm)?;
    let h = block.conv2.forward(ctx, &h, &topo.subm)?;
    let y = if residual { ctx.tape.add(x, &h)? } else { h };
    Ok((y, prefs))
}

/// Runs every stage. Returns per-stage outputs (after the blocks, before
/// downsampling) and the first block's preferences per stage.
pub fn encoder_forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    layout: &ModelLayout,
    topo: &Topology,
    residual: bool,
) -> Result<(Vec<Var<T>>, Vec<Option<Var<T>>>)> {
    if topo.stages.len() != layout.stages.len() {
        return Err(Error::Shape(format!(
            "topology has {} stages, model has {}",
            topo.stages.len(),
            layout.stages.len()
        )));
    }
    let mut outs = Vec::with_capacity(layout.stages.len());
    let mut prefs = Vec::with_capacity(layout.stages.len());
    let mut h = x.clone();
    for (stage, st) in layout.stages.iter().zip(&topo.stages) {
        let mut first = None;
        for block in &stage.blocks {
            let (y, p) = block_forward(ctx, &h, block, st, residual)?;
            first.get_or_insert(p);
            h = y;
        }
        outs.push(h.clone());
        prefs.push(first);
        if let (Some(down), Some(map)) = (&stage.down, &st.down) {
            h = down.forward(ctx, &h, map)?;
        }
    }
    Ok((outs, prefs))
}

/// Coarse to fine: `z_s = linear(z_{s+1}[parent] ++ skip_s)`.
pub fn decoder_forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    stage_outputs: &[Var<T>],
    layout: &ModelLayout,
    topo: &Topology,
) -> Result<Var<T>> {
    let n = stage_outputs.len();
    if n == 0 || layout.decoder.len() + 1 != n || topo.stages.len() != n {
        return Err(Error::Shape(format!("decoder got {n} stage outputs for {} stages", layout.decoder.len() + 1)));
    }
    let mut z = stage_outputs[n - 1].clone();
    for s in (0..n - 1).rev() {
        let parents = topo.stages[s]
            .parents
            .clone()
            .ok_or_else(|| Error::Topology(format!("stage {s} has no parent map")))?;
        let up = ctx.tape.gather(&z, parents)?;
        let cat = ctx.tape.concat(&up, &stage_outputs[s])?;
        z = layout.decoder[s].forward(ctx, &cat)?;
    }
    Ok(z)
}

pub struct ForwardOutput<T> {
    /// `N x num_classes`, rows in canonical voxel order.
    pub logits: Var<T>,
    /// First-block scale preferences per stage (`None` for empty stages).
    pub preferences: Vec<Option<Var<T>>>,
}

/// Stem, encoder, decoder and head.
pub fn model_forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    features: &Var<T>,
    layout: &ModelLayout,
    topo: &Topology,
    residual: bool,
) -> Result<ForwardOutput<T>> {
    let h = layout.stem.forward(ctx, features, &topo.stages[0].subm)?;
    let (outs, preferences) = encoder_forward(ctx, &h, layout, topo, residual)?;
    let z = decoder_forward(ctx, &outs, layout, topo)?;
    let logits = layout.head.forward(ctx, &z)?;
    Ok(ForwardOutput { logits, preferences })
}

/// Configuration, layout and parameter values.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut params = ModelParams::new(config.seed);
        let layout = ModelLayout::register(&config, &mut params)?;
        Ok(Self { config, layout, params })
    }

    /// Adopts existing parameter values; every name and shape must match the
    /// layout `config` produces.
    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        let fresh = Self::new(config)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Compat(format!(
                "expected {} tensors, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (want, got) in fresh.params.iter().zip(params.iter()) {
            if want.name() != got.name() || want.shape() != got.shape() || want.kind() != got.kind() {
                return Err(Error::Compat(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    want.name(),
                    want.shape(),
                    got.name(),
                    got.shape()
                )));
            }
        }
        Ok(Self { config: fresh.config, layout: fresh.layout, params })
    }

    pub fn topology(&self, coords: &[VoxelCoord]) -> Result<Topology> {
        Topology::build(coords, &self.config)
    }

    fn check_input(&self, x: &SparseTensor<T>) -> Result<()> {
        if x.channels() != self.config.in_channels || x.stride() != 1 {
            return Err(Error::Shape(format!(
                "model expects {} channels at stride 1, got {} at stride {}",
                self.config.in_channels,
                x.channels(),
                x.stride()
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: &SparseTensor<T>,
        topo: &Topology,
        mode: NormMode,
    ) -> Result<ForwardOutput<T>> {
        self.check_input(x)?;
        let mut ctx = Ctx::new(tape, &self.params, mode);
        let f = ctx.tape.constant(x.features().clone());
        model_forward(&mut ctx, &f, &self.layout, topo, self.config.residual)
    }

    /// Eval-mode logits without recording.
    pub fn predict(&self, x: &SparseTensor<T>) -> Result<Matrix<T>> {
        let topo = self.topology(x.coords())?;
        let mut tape = Tape::inference();
        Ok(self.forward(&mut tape, x, &topo, NormMode::Eval)?.logits.value().clone())
    }

    /// Per-voxel argmax class.
    pub fn classify(&self, x: &SparseTensor<T>) -> Result<Vec<u16>> {
        Ok(argmax_rows(&self.predict(x)?))
    }

    /// Eval-mode scale preferences of the first block of `stage`, with the
    /// stage's coordinates.
    pub fn preferences(&self, x: &SparseTensor<T>, stage: usize) -> Result<(Arc<[VoxelCoord]>, Matrix<T>)> {
        if stage >= self.config.stages() || self.config.blocks_per_stage[stage] == 0 {
            return Err(Error::Config(format!("stage {stage} has no blocks in this model")));
        }
        let topo = self.topology(x.coords())?;
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, x, &topo, NormMode::Eval)?;
        let w = out.preferences[stage].as_ref().map(|v| v.value().clone()).expect("stage has blocks");
        Ok((topo.stages[stage].coords.clone(), w))
    }
}

pub(crate) fn argmax_rows<T: Scalar>(m: &Matrix<T>) -> Vec<u16> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u16
        })
        .collect()
}
