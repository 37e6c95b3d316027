use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{floor_div, VoxelCoord};
use crate::{Error, Result};

/// Non-overlapping cubic grids of side `grid_size` (absolute voxel units)
/// covering the occupied voxels of one tensor.
///
/// `members(i)` lists the voxels of grid `i` in ascending row order and
/// `grid_of(j)` is the inverse map. Grid ids follow ascending
/// `(batch, floor(x/g), floor(y/g), floor(z/g))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPartition {
    grid_size: u32,
    grid_ids: Arc<[u32]>,
    starts: Vec<u32>,
    members: Vec<u32>,
    keys: Vec<VoxelCoord>,
}

impl GridPartition {
    pub fn grid_size(&self) -> u32 {
        self.grid_size
    }

    pub fn grid_count(&self) -> usize {
        self.keys.len()
    }

    /// Number of partitioned voxels.
    pub fn len(&self) -> usize {
        self.grid_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_ids.is_empty()
    }

    #[inline]
    pub fn grid_of(&self, voxel: usize) -> usize {
        self.grid_ids[voxel] as usize
    }

    pub fn grid_ids(&self) -> &[u32] {
        &self.grid_ids
    }

    pub(crate) fn grid_ids_arc(&self) -> Arc<[u32]> {
        self.grid_ids.clone()
    }

    #[inline]
    pub fn members(&self, grid: usize) -> &[u32] {
        &self.members[self.starts[grid] as usize..self.starts[grid + 1] as usize]
    }

    /// Grid key: batch plus the floor-divided cell index.
    pub fn key(&self, grid: usize) -> VoxelCoord {
        self.keys[grid]
    }
}

/// Groups voxels into grids of side `grid_size`; `grid_size` must be a positive
/// multiple of `stride`.
pub fn partition(coords: &[VoxelCoord], stride: u32, grid_size: u32) -> Result<GridPartition> {
    if grid_size == 0 || stride == 0 || grid_size % stride != 0 {
        return Err(Error::InvalidGridSize { grid: grid_size, stride });
    }
    let g = grid_size as i32;
    let cell = |c: &VoxelCoord| {
        VoxelCoord::new(c.batch, floor_div(c.x, g), floor_div(c.y, g), floor_div(c.z, g))
    };
    let mut order: Vec<(VoxelCoord, u32)> =
        coords.iter().enumerate().map(|(i, c)| (cell(c), i as u32)).collect();
    order.sort_unstable();

    let mut grid_ids = alloc::vec![0u32; coords.len()];
    let mut starts = Vec::new();
    let mut members = Vec::with_capacity(coords.len());
    let mut keys = Vec::new();
    for (pos, &(key, row)) in order.iter().enumerate() {
        if keys.last() != Some(&key) {
            keys.push(key);
            starts.push(pos as u32);
        }
        grid_ids[row as usize] = (keys.len() - 1) as u32;
        members.push(row);
    }
    starts.push(order.len() as u32);
    Ok(GridPartition { grid_size, grid_ids: grid_ids.into(), starts, members, keys })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: i32, y: i32, z: i32) -> VoxelCoord {
        VoxelCoord::new(0, x, y, z)
    }

    #[test]
    fn separate_cells_give_singletons() {
        let p = partition(&[c(0, 0, 0), c(5, 5, 5)], 1, 4).unwrap();
        assert_eq!(p.grid_count(), 2);
        assert_eq!(p.members(0), &[0]);
        assert_eq!(p.members(1), &[1]);
    }

    #[test]
    fn shared_cell_gives_one_grid() {
        let p = partition(&[c(0, 0, 0), c(1, 2, 3)], 1, 4).unwrap();
        assert_eq!(p.grid_count(), 1);
        assert_eq!(p.members(0), &[0, 1]);
    }

    #[test]
    fn negative_coords_use_floor() {
        let p = partition(&[c(-1, 0, 0), c(0, 0, 0), c(-4, 0, 0), c(-5, 0, 0)], 1, 4).unwrap();
        // -5 -> cell -2; -4,-1 -> cell -1; 0 -> cell 0
        assert_eq!(p.grid_count(), 3);
        assert_eq!(p.members(0), &[3]);
        assert_eq!(p.members(1), &[0, 2]);
        assert_eq!(p.members(2), &[1]);
    }

    #[test]
    fn batches_never_share_grids() {
        let coords = [VoxelCoord::new(0, 0, 0, 0), VoxelCoord::new(1, 0, 0, 0)];
        let p = partition(&coords, 1, 8).unwrap();
        assert_eq!(p.grid_count(), 2);
    }

    #[test]
    fn grid_size_must_be_multiple_of_stride() {
        assert_eq!(
            partition(&[c(0, 0, 0)], 2, 3),
            Err(Error::InvalidGridSize { grid: 3, stride: 2 })
        );
        assert!(partition(&[c(0, 0, 0)], 1, 0).is_err());
        assert!(partition(&[c(0, 0, 0)], 2, 4).is_ok());
    }
}
