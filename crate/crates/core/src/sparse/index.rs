use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{fnv1a_hash, VoxelCoord};
use crate::{Error, Result};

const EMPTY: u32 = u32::MAX;

/// Open-addressing table from voxel coordinate to row, keyed by FNV-1a with
/// linear probing. Probes compare full coordinates, so hash collisions only
/// cost extra probes.
#[derive(Clone, Debug)]
pub struct HashIndex {
    slots: Vec<u32>,
    keys: Vec<VoxelCoord>,
    mask: usize,
}

impl HashIndex {
    #[inline]
    pub fn get(&self, c: &VoxelCoord) -> Option<usize> {
        let mut slot = fnv1a_hash(c) as usize & self.mask;
        loop {
            let row = self.slots[slot];
            if row == EMPTY {
                return None;
            }
            if self.keys[row as usize] == *c {
                return Some(row as usize);
            }
            slot = (slot + 1) & self.mask;
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Indexes `coords` by row. Load factor stays at or below one half.
pub fn build_index(coords: &[VoxelCoord]) -> Result<HashIndex> {
    if coords.len() >= EMPTY as usize {
        return Err(Error::Shape(format!("{} voxels exceed index capacity", coords.len())));
    }
    let cap = (coords.len() * 2).next_power_of_two().max(16);
    let mask = cap - 1;
    let mut slots = vec![EMPTY; cap];
    for (row, c) in coords.iter().enumerate() {
        let mut slot = fnv1a_hash(c) as usize & mask;
        loop {
            let cur = slots[slot];
            if cur == EMPTY {
                slots[slot] = row as u32;
                break;
            }
            if coords[cur as usize] == *c {
                return Err(Error::DuplicateVoxel(format!("{c}")));
            }
            slot = (slot + 1) & mask;
        }
    }
    Ok(HashIndex { slots, keys: coords.to_vec(), mask })
}
