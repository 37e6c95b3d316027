//! Multi-scale fusion with per-voxel preference over grid sizes.
//!
//! `w_i = softmax(adp(f_i))` over the `K` scales, then
//! `f'_i = out(proj(f_i) ++ sum_k w_ik o_k[grid_k(i)])`, where `proj` and
//! `out` are linear + norm + ReLU projections and `++` concatenates channels.
//! The receptive field of voxel `i` is read out as `r_i = sum_k w_ik g_k`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arconv::{arconv_on, ARConvScaleParams};
use crate::geometry::GridPartition;
use crate::ops::{Ctx, Init, LinearLayer, ModelParams, ProjLayer};
use crate::tape::Var;
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorParams {
    /// `d -> K` preference head; `None` when the aggregator is disabled and
    /// a single scale is used with weight 1.
    pub adp: Option<LinearLayer>,
    pub proj: ProjLayer,
    pub out: ProjLayer,
    /// Grid sizes in voxel units of the current stage, strictly increasing.
    pub grid_sizes: Vec<u32>,
}

pub(crate) fn check_grid_sizes(g: &[u32]) -> Result<()> {
    if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("grid sizes must be positive and strictly increasing, got {g:?}")));
    }
    Ok(())
}

impl AggregatorParams {
    /// The preference head starts at zero, so every voxel begins with uniform
    /// weights over the scales.
    pub fn register<T: Scalar, R: Rng>(
        params: &mut ModelParams<T>,
        rng: &mut R,
        name: &str,
        d: usize,
        grid_sizes: &[u32],
        adaptive: bool,
    ) -> Result<Self> {
        check_grid_sizes(grid_sizes)?;
        if !adaptive && grid_sizes.len() != 1 {
            return Err(Error::Config("a disabled aggregator takes exactly one grid size".into()));
        }
        let adp = if adaptive {
            Some(LinearLayer::register(params, rng, &format!("{name}.adp"), d, grid_sizes.len(), true, Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            adp,
            proj: ProjLayer::register(params, rng, &format!("{name}.proj"), d, d)?,
            out: ProjLayer::register(params, rng, &format!("{name}.out"), 2 * d, d)?,
            grid_sizes: grid_sizes.to_vec(),
        })
    }

    pub fn scales(&self) -> usize {
        self.grid_sizes.len()
    }
}

/// `N x K` preference weights; rows lie on the simplex.
pub fn preference_weights<T: Scalar>(ctx: &mut Ctx<'_, T>, x: &Var<T>, p: &AggregatorParams) -> Result<Var<T>> {
    match &p.adp {
        Some(adp) => {
            let logits = adp.forward(ctx, x)?;
            ctx.tape.row_softmax(&logits)
        }
        None => Ok(ctx.tape.constant(Matrix::filled(x.rows(), 1, T::one()))),
    }
}

/// Fuses per-scale grid outputs back onto the voxels.
pub fn fuse<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    scale_outputs: &[(Var<T>, Arc<GridPartition>)],
    weights: &Var<T>,
    p: &AggregatorParams,
) -> Result<Var<T>> {
    if scale_outputs.len() != p.scales() || weights.cols() != p.scales() || weights.rows() != x.rows() {
        return Err(Error::Shape(format!(
            "fuse: {} scale outputs, {} weight columns, aggregator has {} scales",
            scale_outputs.len(),
            weights.cols(),
            p.scales()
        )));
    }
    let (outs, parts): (Vec<_>, Vec<_>) = scale_outputs.iter().cloned().unzip();
    let mixed = ctx.tape.broadcast_mix(weights, &outs, &parts)?;
    let projected = p.proj.forward(ctx, x)?;
    let cat = ctx.tape.concat(&projected, &mixed)?;
    p.out.forward(ctx, &cat)
}

/// Runs every scale on its partition, predicts preferences and fuses.
/// Returns the fused features and the preference weights.
pub fn aggregate<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x: &Var<T>,
    parts: &[Arc<GridPartition>],
    scales: &[ARConvScaleParams],
    p: &AggregatorParams,
) -> Result<(Var<T>, Var<T>)> {
    if parts.len() != scales.len() {
        return Err(Error::Shape(format!("{} partitions for {} scales", parts.len(), scales.len())));
    }
    let mut outs = Vec::with_capacity(scales.len());
    for (part, sp) in parts.iter().zip(scales) {
        outs.push((arconv_on(ctx, x, part, sp)?, part.clone()));
    }
    let w = preference_weights(ctx, x, p)?;
    let fused = fuse(ctx, x, &outs, &w, p)?;
    Ok((fused, w))
}

/// `r_i = sum_k w_ik g_k`, in the voxel units of `grid_sizes`.
///
/// Each row is divided by its own sum in `f64`, so a low-precision softmax
/// that sums to `1 +- eps` still lands inside `[min g, max g]`.
pub fn receptive_field_sizes<T: Scalar>(w: &Matrix<T>, grid_sizes: &[u32]) -> Result<Vec<f64>> {
    if w.cols() != grid_sizes.len() {
        return Err(Error::Shape(format!("{} weight columns for {} grid sizes", w.cols(), grid_sizes.len())));
    }
    (0..w.rows())
        .map(|i| {
            let row = w.row(i);
            if row.iter().any(|v| !(v.as_f64() >= 0.0)) {
                return Err(Error::Numeric("preference weights"));
            }
            let total: f64 = row.iter().map(|v| v.as_f64()).sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::Numeric("preference weights"));
            }
            Ok(row.iter().zip(grid_sizes).map(|(&wk, &g)| wk.as_f64() * g as f64).sum::<f64>() / total)
        })
        .collect()
}

/// Linear blue-to-red colormap: `lo` maps to (0, 0, 255), `hi` to (255, 0, 0).
pub fn receptive_field_color(r: f64, lo: f64, hi: f64) -> [u8; 3] {
    let t = if hi > lo { ((r - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let red = num_traits::Float::round(255.0 * t) as u8;
    [red, 0, 255 - red]
}
