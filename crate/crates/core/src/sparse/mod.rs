//! Coordinate lookup and kernel maps for sparse convolution.

mod index;
mod kernel_map;

pub use index::{build_index, HashIndex};
pub use kernel_map::{build_strided_map, build_submanifold_map, KernelMap, DEFAULT_KERNEL_SIZE};
