use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::index::build_index;
use crate::geometry::VoxelCoord;
use crate::{Error, Result};

pub const DEFAULT_KERNEL_SIZE: u32 = 3;

/// Compressed rows: for row `r`, `entries[starts[r]..starts[r + 1]]` holds
/// `(offset, other_row)` pairs sorted by offset.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Csr {
    pub starts: Vec<u32>,
    pub entries: Vec<(u32, u32)>,
}

impl Csr {
    #[inline]
    pub fn row(&self, r: usize) -> &[(u32, u32)] {
        &self.entries[self.starts[r] as usize..self.starts[r + 1] as usize]
    }
}

/// Precomputed connections between input and output voxels of one sparse
/// convolution. `pairs(o)` lists `(input_row, output_row)` for kernel offset
/// `o`; the input voxel sits at `output + offset * in_stride`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMap {
    kernel_size: u32,
    in_stride: u32,
    out_stride: u32,
    offsets: Vec<[i32; 3]>,
    pairs: Vec<Vec<(u32, u32)>>,
    n_in: usize,
    out_coords: Arc<[VoxelCoord]>,
    by_out: Csr,
    by_in: Csr,
}

impl KernelMap {
    pub fn kernel_size(&self) -> u32 {
        self.kernel_size
    }

    pub fn kernel_volume(&self) -> usize {
        self.offsets.len()
    }

    pub fn in_stride(&self) -> u32 {
        self.in_stride
    }

    pub fn out_stride(&self) -> u32 {
        self.out_stride
    }

    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn pairs(&self, offset: usize) -> &[(u32, u32)] {
        &self.pairs[offset]
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.out_coords.len()
    }

    pub fn out_coords(&self) -> &[VoxelCoord] {
        &self.out_coords
    }

    pub fn is_submanifold(&self) -> bool {
        self.kernel_size % 2 == 1
    }

    pub(crate) fn by_out(&self) -> &Csr {
        &self.by_out
    }

    pub(crate) fn by_in(&self) -> &Csr {
        &self.by_in
    }
}

fn transpose(by_out: &Csr, n_in: usize) -> Csr {
    let mut counts = vec![0u32; n_in + 1];
    for &(_, i) in &by_out.entries {
        counts[i as usize + 1] += 1;
    }
    for r in 0..n_in {
        counts[r + 1] += counts[r];
    }
    let starts = counts.clone();
    let mut cursor = counts;
    let mut entries = vec![(0u32, 0u32); by_out.entries.len()];
    for out in 0..by_out.starts.len() - 1 {
        for &(o, i) in by_out.row(out) {
            let slot = &mut cursor[i as usize];
            entries[*slot as usize] = (o, out as u32);
            *slot += 1;
        }
    }
    // Rows were filled in ascending output order; sort each by offset.
    for r in 0..n_in {
        entries[starts[r] as usize..starts[r + 1] as usize].sort_unstable();
    }
    Csr { starts, entries }
}

fn split_by_offset(by_out: &Csr, volume: usize) -> Vec<Vec<(u32, u32)>> {
    let mut pairs = vec![Vec::new(); volume];
    for out in 0..by_out.starts.len() - 1 {
        for &(o, i) in by_out.row(out) {
            pairs[o as usize].push((i, out as u32));
        }
    }
    pairs
}

/// Submanifold map: outputs sit exactly on the input voxels. The pair
/// `(j, i)` at offset `o` exists iff `p_j = p_i + o * stride` and both are
/// occupied. Offsets enumerate the centered cube in `(dx, dy, dz)` order.
pub fn build_submanifold_map(coords: &[VoxelCoord], stride: u32, kernel_size: u32) -> Result<KernelMap> {
    if kernel_size % 2 == 0 {
        return Err(Error::Config(alloc::format!(
            "submanifold kernel size must be odd, got {kernel_size}"
        )));
    }
    let index = build_index(coords)?;
    let r = (kernel_size / 2) as i32;
    let mut offsets = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                offsets.push([dx, dy, dz]);
            }
        }
    }
    let s = stride as i32;
    let mut starts = Vec::with_capacity(coords.len() + 1);
    let mut entries = Vec::new();
    starts.push(0);
    for c in coords {
        for (o, d) in offsets.iter().enumerate() {
            if let Some(j) = c.offset(*d, s).and_then(|q| index.get(&q)) {
                entries.push((o as u32, j as u32));
            }
        }
        starts.push(entries.len() as u32);
    }
    let by_out = Csr { starts, entries };
    let by_in = transpose(&by_out, coords.len());
    let pairs = split_by_offset(&by_out, offsets.len());
    Ok(KernelMap {
        kernel_size,
        in_stride: stride,
        out_stride: stride,
        offsets,
        pairs,
        n_in: coords.len(),
        out_coords: coords.into(),
        by_out,
        by_in,
    })
}

/// Kernel (2,2,2), stride (2,2,2) downsampling map. Each input voxel feeds
/// the coarse cell containing it; the coarse coordinates are returned in
/// canonical order and have stride `2 * stride`.
pub fn build_strided_map(coords: &[VoxelCoord], stride: u32) -> Result<KernelMap> {
    let out_stride = stride
        .checked_mul(2)
        .filter(|s| *s <= i32::MAX as u32)
        .ok_or_else(|| Error::Config(alloc::format!("stride {stride} too large to downsample")))?;
    let s2 = out_stride as i32;
    let s = stride as i32;
    let mut cells: Vec<(VoxelCoord, u32)> = coords
        .iter()
        .enumerate()
        .map(|(j, c)| (c.cell_origin(s2), j as u32))
        .collect();
    cells.sort_unstable();

    let mut out_coords = Vec::new();
    let mut starts = vec![0u32];
    let mut entries = Vec::with_capacity(coords.len());
    for &(cell, j) in &cells {
        if out_coords.last() != Some(&cell) {
            if !out_coords.is_empty() {
                starts.push(entries.len() as u32);
            }
            out_coords.push(cell);
        }
        let c = coords[j as usize];
        let o = ((c.x - cell.x) / s) * 4 + ((c.y - cell.y) / s) * 2 + (c.z - cell.z) / s;
        entries.push((o as u32, j));
    }
    starts.push(entries.len() as u32);
    if coords.is_empty() {
        starts.truncate(1);
    }
    // Within a cell, sort by offset so rows are ordered like the submanifold case.
    for r in 0..out_coords.len() {
        entries[starts[r] as usize..starts[r + 1] as usize].sort_unstable();
    }
    let by_out = Csr { starts, entries };
    let by_in = transpose(&by_out, coords.len());
    let offsets = (0..8).map(|o| [(o >> 2) & 1, (o >> 1) & 1, o & 1]).collect::<Vec<_>>();
    let pairs = split_by_offset(&by_out, 8);
    Ok(KernelMap {
        kernel_size: 2,
        in_stride: stride,
        out_stride,
        offsets,
        pairs,
        n_in: coords.len(),
        out_coords: out_coords.into(),
        by_out,
        by_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: i32, y: i32, z: i32) -> VoxelCoord {
        VoxelCoord::new(0, x, y, z)
    }

    #[test]
    fn isolated_voxel_only_self_pair() {
        let m = build_submanifold_map(&[c(0, 0, 0)], 1, 3).unwrap();
        assert_eq!(m.pair_count(), 1);
        assert_eq!(m.pairs(13), &[(0, 0)]);
        assert_eq!(m.offsets()[13], [0, 0, 0]);
    }

    #[test]
    fn neighbor_pairs_enumerated() {
        let coords = [c(0, 0, 0), c(1, 0, 0)];
        let m = build_submanifold_map(&coords, 1, 3).unwrap();
        assert_eq!(m.pair_count(), 4);
        let plus = m.offsets().iter().position(|o| *o == [1, 0, 0]).unwrap();
        let minus = m.offsets().iter().position(|o| *o == [-1, 0, 0]).unwrap();
        // output 0 reads input 1 at +x; output 1 reads input 0 at -x.
        assert_eq!(m.pairs(plus), &[(1, 0)]);
        assert_eq!(m.pairs(minus), &[(0, 1)]);
        assert_eq!(m.pairs(13), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn stride_scales_offsets() {
        let coords = [c(0, 0, 0), c(2, 0, 0), c(1, 0, 0)];
        let mut sorted = coords.to_vec();
        sorted.sort();
        // At stride 2 only (0,0,0)-(2,0,0) connect.
        let m = build_submanifold_map(&[c(0, 0, 0), c(2, 0, 0)], 2, 3).unwrap();
        assert_eq!(m.pair_count(), 4);
        assert!(build_submanifold_map(&sorted, 1, 4).is_err());
    }

    #[test]
    fn full_block_downsamples_to_one() {
        let mut coords = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    coords.push(c(x, y, z));
                }
            }
        }
        let m = build_strided_map(&coords, 1).unwrap();
        assert_eq!(m.n_out(), 1);
        assert_eq!(m.pair_count(), 8);
        assert_eq!(m.out_stride(), 2);
        for o in 0..8 {
            assert_eq!(m.pairs(o).len(), 1);
        }
    }

    #[test]
    fn separate_cells() {
        let m = build_strided_map(&[c(0, 0, 0), c(2, 0, 0)], 1).unwrap();
        assert_eq!(m.out_coords(), &[c(0, 0, 0), c(2, 0, 0)]);
        assert_eq!(m.pairs(0), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn negative_cells_floor() {
        let m = build_strided_map(&[c(-1, 0, 0), c(-2, 0, 0)], 1).unwrap();
        assert_eq!(m.out_coords(), &[c(-2, 0, 0)]);
        assert_eq!(m.by_in().row(0), &[(4, 0)]);
        assert_eq!(m.by_in().row(1), &[(0, 0)]);
    }

    #[test]
    fn empty_input_maps() {
        let m = build_strided_map(&[], 1).unwrap();
        assert_eq!(m.n_out(), 0);
        let m = build_submanifold_map(&[], 1, 3).unwrap();
        assert_eq!(m.pair_count(), 0);
    }
}
