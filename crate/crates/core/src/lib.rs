//! Sparse voxel convolution engine for 3D semantic segmentation.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `parallel` feature to
//! spread row-wise work over a rayon pool; every reduction keeps a fixed order,
//! so results do not depend on the thread count.
//!
//! Layout:
//!
//! - [`geometry`]: point clouds, voxel coordinates, voxelization, FNV-1a
//!   hashing and non-overlapping grid partitions.
//! - [`sparse`]: hash index over voxel coordinates and kernel maps for
//!   submanifold and strided convolution.
//! - [`tape`]: reverse-mode gradient tape over dense row-major matrices.
//! - [`ops`]: differentiable primitives (convolutions, linear, batch norm,
//!   ReLU, grid pooling, parent upsampling).
//! - [`arconv`]: adaptive relation convolution at one grid scale.
//! - [`aggregator`]: per-voxel preference over grid scales and fusion.
//! - [`network`]: blocks, encoder, decoder, model variants.
//! - [`training`]: loss, AdamW, cosine schedule, finite-difference checks,
//!   synthetic scenes and the training loop.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aggregator;
pub mod arconv;
mod error;
pub mod geometry;
pub mod network;
pub mod ops;
mod par;
mod scalar;
pub mod sparse;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{PointCloud, SparseTensor, VoxelCoord};
pub use scalar::{Matrix, Scalar};
