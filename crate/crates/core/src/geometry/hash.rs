use super::VoxelCoord;

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
#[inline]
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET_BASIS;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash of `(batch, x, y, z)` serialized as four little-endian `i32`.
#[inline]
pub fn fnv1a_hash(c: &VoxelCoord) -> u64 {
    let mut buf = [0u8; 16];
    buf[0..4].copy_from_slice(&(c.batch as i32).to_le_bytes());
    buf[4..8].copy_from_slice(&c.x.to_le_bytes());
    buf[8..12].copy_from_slice(&c.y.to_le_bytes());
    buf[12..16].copy_from_slice(&c.z.to_le_bytes());
    fnv1a_64(&buf)
}
