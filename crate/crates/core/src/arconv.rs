//! Adaptive relation convolution at one grid scale.
//!
//! For every grid `i` of a partition:
//!
//! 1. centroid: `ctr_i = mean_j proj(f_j)` with `proj` = linear, norm, ReLU;
//! 2. relation kernel: `W[:, j] = weight_gen(f_j - ctr_i)` for each member `j`;
//! 3. per-channel softmax of `W` over the members, shifted by the grid max;
//! 4. depthwise aggregation `o[i, c] = sum_j W'[c, j] f[j, c]`.
//!
//! The grid output `o_i` is the single agent the aggregator later broadcasts
//! back to every member voxel.
//!
//! Kernels are stored one row per voxel: row `j` of the `N x d` matrix is
//! column `j` of the `d x N_i` kernel of the grid containing `j`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{partition, GridPartition, VoxelCoord};
use crate::ops::{self, Ctx, Init, LinearLayer, ModelParams, ProjLayer};
use crate::tape::{Tape, Var};
use crate::{Error, Matrix, Result, Scalar};

/// Parameters of one scale: the centroid projection and the kernel generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ARConvScaleParams {
    pub proj: ProjLayer,
    pub weight: LinearLayer,
}

impl ARConvScaleParams {
    pub fn register<T: Scalar, R: Rng>(params: &mut ModelParams<T>, rng: &mut R, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            proj: ProjLayer::register(params, rng, &alloc::format!("{name}.proj"), d, d)?,
            weight: LinearLayer::register(params, rng, &alloc::format!("{name}.weight_gen"), d, d, true, Init::FanIn)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.weight.d_out
    }
}

/// Per-grid kernel weights `W_i` (`d x N_i`), unnormalized or normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicKernel<T> {
    weights: Matrix<T>,
    part: Arc<GridPartition>,
}

impl<T: Scalar> DynamicKernel<T> {
    pub fn new(weights: Matrix<T>, part: Arc<GridPartition>) -> Result<Self> {
        if weights.rows() != part.len() {
            return Err(Error::Shape(alloc::format!(
                "kernel has {} member columns, partition covers {}",
                weights.rows(),
                part.len()
            )));
        }
        Ok(Self { weights, part })
    }

    /// One row per voxel.
    pub fn voxel_rows(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn partition(&self) -> &Arc<GridPartition> {
        &self.part
    }

    pub fn channels(&self) -> usize {
        self.weights.cols()
    }

    /// `W_i` as a `d x N_i` matrix, columns in member order.
    pub fn grid_kernel(&self, grid: usize) -> Matrix<T> {
        let members = self.part.members(grid);
        let d = self.weights.cols();
        let mut m = Matrix::zeros(d, members.len());
        for (col, &j) in members.iter().enumerate() {
            for c in 0..d {
                m.set(c, col, self.weights.get(j as usize, c));
            }
        }
        m
    }

    /// Channel-wise softmax over each grid's members.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self { weights: ops::segment_softmax(&self.weights, &self.part)?, part: self.part.clone() })
    }
}

/// Centroid feature of every grid: mean of the projected member features.
pub fn centroid_features<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    part: &Arc<GridPartition>,
    p: &ARConvScaleParams,
) -> Result<Var<T>> {
    let h = p.proj.forward(ctx, x)?;
    ctx.tape.grid_mean(&h, part)
}

/// Unnormalized relation kernel: `weight_gen(f_j - ctr_grid(j))` per voxel.
pub fn relation_weights<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    part: &Arc<GridPartition>,
    centroids: &Var<T>,
    p: &ARConvScaleParams,
) -> Result<Var<T>> {
    if centroids.rows() != part.grid_count() {
        return Err(Error::Shape(alloc::format!(
            "{} centroids for {} grids",
            centroids.rows(),
            part.grid_count()
        )));
    }
    let broadcast = ctx.tape.gather(centroids, part.grid_ids_arc())?;
    let diff = ctx.tape.sub(x, &broadcast)?;
    p.weight.forward(ctx, &diff)
}

/// Softmax over each grid's members, per channel.
pub fn normalize_kernel<T: Scalar>(tape: &mut Tape<T>, w: &Var<T>, part: &Arc<GridPartition>) -> Result<Var<T>> {
    tape.segment_softmax(w, part)
}

/// Depthwise aggregation of member features with normalized kernel weights.
pub fn grid_depthwise<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Var<T>,
    part: &Arc<GridPartition>,
    normalized: &Var<T>,
) -> Result<Var<T>> {
    tape.grid_depthwise(normalized, x, part)
}

/// Full scale pipeline on a prebuilt partition; returns `N_grids x d`.
pub fn arconv_on<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    part: &Arc<GridPartition>,
    p: &ARConvScaleParams,
) -> Result<Var<T>> {
    let ctr = centroid_features(ctx, x, part, p)?;
    let w = relation_weights(ctx, x, part, &ctr, p)?;
    let wn = normalize_kernel(ctx.tape, &w, part)?;
    grid_depthwise(ctx.tape, x, part, &wn)
}

/// Partitions `coords` at grid size `grid_size` (absolute voxel units) and
/// runs [`arconv_on`].
pub fn arconv_scale<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    coords: &[VoxelCoord],
    stride: u32,
    grid_size: u32,
    p: &ARConvScaleParams,
) -> Result<(Var<T>, Arc<GridPartition>)> {
    if coords.len() != x.rows() {
        return Err(Error::Shape(alloc::format!("{} coords for {} feature rows", coords.len(), x.rows())));
    }
    let part = Arc::new(partition(coords, stride, grid_size)?);
    let o = arconv_on(ctx, x, &part, p)?;
    Ok((o, part))
}

/// Member rows of each grid, for callers that want per-grid views.
pub fn grid_members(part: &GridPartition) -> Vec<&[u32]> {
    (0..part.grid_count()).map(|g| part.members(g)).collect()
}
