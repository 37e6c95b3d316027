//! Point clouds, voxel coordinates and grid partitions.

mod hash;
mod partition;

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result, Scalar};

pub use hash::{fnv1a_64, fnv1a_hash, FNV_OFFSET_BASIS, FNV_PRIME};
pub use partition::{partition, GridPartition};

/// Default voxel edge length in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.02;

/// Integer voxel position. Ordering is `(batch, x, y, z)`, which is the
/// canonical voxel order used everywhere in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub batch: u32,
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub const fn new(batch: u32, x: i32, y: i32, z: i32) -> Self {
        Self { batch, x, y, z }
    }

    /// Builds a coordinate from wide integers, rejecting anything outside the
    /// 32-bit signed range (the batch must also fit in an `i32`).
    pub fn from_wide(batch: i64, x: i64, y: i64, z: i64) -> Result<Self> {
        let narrow = |v: i64| i32::try_from(v).map_err(|_| Error::CoordOverflow(v));
        if !(0..=i32::MAX as i64).contains(&batch) {
            return Err(Error::CoordOverflow(batch));
        }
        Ok(Self { batch: batch as u32, x: narrow(x)?, y: narrow(y)?, z: narrow(z)? })
    }

    #[inline]
    pub fn xyz(&self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }

    /// `self + delta * scale`, or `None` if a component leaves the `i32` range.
    #[inline]
    pub fn offset(&self, delta: [i32; 3], scale: i32) -> Option<Self> {
        let add = |a: i32, d: i32| a.checked_add(d.checked_mul(scale)?);
        Some(Self {
            batch: self.batch,
            x: add(self.x, delta[0])?,
            y: add(self.y, delta[1])?,
            z: add(self.z, delta[2])?,
        })
    }

    /// Lower corner of the cell of side `cell` containing this voxel.
    #[inline]
    pub fn cell_origin(&self, cell: i32) -> Self {
        Self {
            batch: self.batch,
            x: floor_div(self.x, cell) * cell,
            y: floor_div(self.y, cell) * cell,
            z: floor_div(self.z, cell) * cell,
        }
    }
}

impl fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]({}, {}, {})", self.batch, self.x, self.y, self.z)
    }
}

#[inline]
pub(crate) fn floor_div(a: i32, b: i32) -> i32 {
    a.div_euclid(b)
}

/// Raw points with per-point features (usually RGB in `[0, 1]`) and
/// optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    features: Vec<f32>,
    feature_dim: usize,
    labels: Option<Vec<u16>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        features: Vec<f32>,
        feature_dim: usize,
        labels: Option<Vec<u16>>,
    ) -> Result<Self> {
        let n = positions.len();
        if features.len() != n * feature_dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} points of dimension {}",
                features.len(),
                n,
                feature_dim
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {} points", l.len(), n)));
            }
        }
        Ok(Self { positions, features, feature_dim, labels })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.positions
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.feature_dim;
        let mut features = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            features,
            feature_dim: d,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Occupied voxels with per-voxel features at a given stride.
///
/// Coordinates are unique, kept in canonical `(batch, x, y, z)` order, and
/// every component is divisible by `stride`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor<T> {
    coords: Vec<VoxelCoord>,
    features: Matrix<T>,
    stride: u32,
}

impl<T: Scalar> SparseTensor<T> {
    /// Validates and sorts into canonical order (features move with their coords).
    pub fn new(coords: Vec<VoxelCoord>, features: Matrix<T>, stride: u32) -> Result<Self> {
        if coords.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} coords but {} feature rows",
                coords.len(),
                features.rows()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidGeometry("stride must be positive".into()));
        }
        let s = stride as i32;
        if let Some(c) = coords.iter().find(|c| c.x % s != 0 || c.y % s != 0 || c.z % s != 0) {
            return Err(Error::InvalidGeometry(format!("{c} not aligned to stride {stride}")));
        }
        let sorted = coords.windows(2).all(|w| w[0] < w[1]);
        let (coords, features) = if sorted {
            (coords, features)
        } else {
            let mut order: Vec<u32> = (0..coords.len() as u32).collect();
            order.sort_unstable_by_key(|&i| coords[i as usize]);
            let c: Vec<VoxelCoord> = order.iter().map(|&i| coords[i as usize]).collect();
            if let Some(w) = c.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateVoxel(format!("{}", w[0])));
            }
            (c, features.select_rows(&order))
        };
        Ok(Self { coords, features, stride })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn into_parts(self) -> (Vec<VoxelCoord>, Matrix<T>, u32) {
        (self.coords, self.features, self.stride)
    }

    /// Same coordinates, new features; the row count must match.
    pub fn with_features<U: Scalar>(&self, features: Matrix<U>) -> Result<SparseTensor<U>> {
        if features.rows() != self.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} voxels",
                features.rows(),
                self.len()
            )));
        }
        Ok(SparseTensor { coords: self.coords.clone(), features, stride: self.stride })
    }

    pub fn cast<U: Scalar>(&self) -> SparseTensor<U> {
        SparseTensor { coords: self.coords.clone(), features: self.features.cast(), stride: self.stride }
    }

    /// Geometric center of each voxel in meters.
    pub fn centers(&self, voxel_size: f64) -> Vec<[f64; 3]> {
        let half = self.stride as f64 * 0.5;
        self.coords
            .iter()
            .map(|c| {
                [
                    (c.x as f64 + half) * voxel_size,
                    (c.y as f64 + half) * voxel_size,
                    (c.z as f64 + half) * voxel_size,
                ]
            })
            .collect()
    }
}

/// Voxelized scene with majority-vote voxel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelScene {
    pub tensor: SparseTensor<f32>,
    pub labels: Option<Vec<u16>>,
    pub voxel_size: f64,
}

/// Quantizes points to `floor(position / voxel_size)`, averaging the features of
/// points that share a voxel. Voxel labels are the majority vote of their
/// points, ties going to the smallest class id.
pub fn voxelize(pc: &PointCloud, voxel_size: f64) -> Result<VoxelScene> {
    if pc.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::InvalidGeometry(format!("voxel size {voxel_size}")));
    }
    let mut keyed = Vec::with_capacity(pc.len());
    for (i, p) in pc.positions().iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry(format!("point {i} has non-finite position")));
        }
        let q = |v: f64| {
            let f = num_traits::Float::floor(v / voxel_size);
            if f < i32::MIN as f64 || f > i32::MAX as f64 {
                Err(Error::CoordOverflow(if f < 0.0 { i64::MIN } else { i64::MAX }))
            } else {
                Ok(f as i64)
            }
        };
        let c = VoxelCoord::from_wide(0, q(p[0])?, q(p[1])?, q(p[2])?)?;
        keyed.push((c, i as u32));
    }
    keyed.sort_unstable();

    let d = pc.feature_dim();
    let mut coords = Vec::new();
    let mut feats: Vec<f32> = Vec::new();
    let mut labels = pc.labels().map(|_| Vec::new());
    let mut votes: Vec<(u16, u32)> = Vec::new();
    let mut acc = alloc::vec![0f64; d];
    let mut start = 0;
    while start < keyed.len() {
        let key = keyed[start].0;
        let mut end = start;
        acc.iter_mut().for_each(|a| *a = 0.0);
        while end < keyed.len() && keyed[end].0 == key {
            let i = keyed[end].1 as usize;
            for (a, &f) in acc.iter_mut().zip(pc.feature(i)) {
                *a += f as f64;
            }
            end += 1;
        }
        let n = (end - start) as f64;
        coords.push(key);
        feats.extend(acc.iter().map(|a| (a / n) as f32));
        if let (Some(out), Some(src)) = (labels.as_mut(), pc.labels()) {
            votes.clear();
            for &(_, i) in &keyed[start..end] {
                let l = src[i as usize];
                match votes.iter_mut().find(|(c, _)| *c == l) {
                    Some((_, n)) => *n += 1,
                    None => votes.push((l, 1)),
                }
            }
            // Highest count wins; among equal counts the smaller id sorts first.
            votes.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            out.push(votes[0].0);
        }
        start = end;
    }
    let n = coords.len();
    let tensor = SparseTensor { coords, features: Matrix::from_vec(n, d, feats), stride: 1 };
    Ok(VoxelScene { tensor, labels, voxel_size })
}
