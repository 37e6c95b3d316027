use alloc::format;
use alloc::vec::Vec;

use super::linear::linear;
use crate::geometry::VoxelCoord;
use crate::sparse::build_index;
use crate::{Error, Matrix, Result, Scalar, SparseTensor};

/// Row of the coarse voxel whose cell contains each fine voxel.
pub fn parent_index(fine: &[VoxelCoord], coarse: &[VoxelCoord], coarse_stride: u32) -> Result<Vec<u32>> {
    let index = build_index(coarse)?;
    let s = coarse_stride as i32;
    fine.iter()
        .map(|c| {
            index
                .get(&c.cell_origin(s))
                .map(|r| r as u32)
                .ok_or_else(|| Error::Topology(format!("voxel {c} has no parent at stride {coarse_stride}")))
        })
        .collect()
}

/// Decoder up-block: each fine voxel concatenates its parent's coarse feature
/// with its own skip feature, then one linear layer maps the result to the
/// output width. `w` is `(d_coarse + d_skip) x d_out`.
pub fn parent_upsample<T: Scalar>(
    coarse: &SparseTensor<T>,
    skip: &SparseTensor<T>,
    w: &Matrix<T>,
    b: Option<&Matrix<T>>,
) -> Result<SparseTensor<T>> {
    let parents = parent_index(skip.coords(), coarse.coords(), coarse.stride())?;
    let up = coarse.features().select_rows(&parents);
    let (n, dc, ds) = (skip.len(), up.cols(), skip.channels());
    let mut cat = Matrix::zeros(n, dc + ds);
    for i in 0..n {
        let row = cat.row_mut(i);
        row[..dc].copy_from_slice(up.row(i));
        row[dc..].copy_from_slice(skip.features().row(i));
    }
    skip.with_features(linear(&cat, w, b)?)
}
