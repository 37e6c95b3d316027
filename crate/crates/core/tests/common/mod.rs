//! Loop oracles shared by the integration tests. Everything here works on
//! plain nested vectors so it shares no code with the engine.
#![allow(dead_code)]

use oacnn_core::geometry::GridPartition;
use oacnn_core::ops::{LinearLayer, ModelParams, NormLayer, ProjLayer, NORM_EPS};
use oacnn_core::{Matrix, VoxelCoord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rows(m: &Matrix<f64>) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn matrix(r: &Rows) -> Matrix<f64> {
    let cols = r.first().map_or(0, Vec::len);
    Matrix::from_vec(r.len(), cols, r.iter().flatten().copied().collect())
}

pub fn random_rows(r: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Rows {
    (0..n).map(|_| (0..d).map(|_| r.random_range(-scale..scale)).collect()).collect()
}

/// `|a - b| / max(|a|, |b|, 1e-12)` over all entries.
pub fn max_rel(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len(), "column count");
        for (&p, &q) in x.iter().zip(y) {
            worst = worst.max((p - q).abs() / p.abs().max(q.abs()).max(1e-12));
        }
    }
    worst
}

/// Distinct voxels with coordinates in `[0, extent)` at the given stride,
/// in canonical order.
pub fn random_coords(r: &mut ChaCha8Rng, n: usize, extent: i32, stride: u32) -> Vec<VoxelCoord> {
    let s = stride as i32;
    let mut c: Vec<VoxelCoord> = (0..n)
        .map(|_| {
            VoxelCoord::new(0, r.random_range(0..extent) * s, r.random_range(0..extent) * s, r.random_range(0..extent) * s)
        })
        .collect();
    c.sort();
    c.dedup();
    c
}

/// Grid of each voxel by direct floor division, grids numbered in order of
/// first appearance of their sorted keys.
pub fn grid_lists(coords: &[VoxelCoord], g: u32) -> Vec<Vec<usize>> {
    let g = g as i64;
    let key = |c: &VoxelCoord| (c.batch, (c.x as i64).div_euclid(g), (c.y as i64).div_euclid(g), (c.z as i64).div_euclid(g));
    let mut keys: Vec<_> = coords.iter().map(key).collect();
    keys.sort();
    keys.dedup();
    let mut lists = vec![Vec::new(); keys.len()];
    for (i, c) in coords.iter().enumerate() {
        lists[keys.binary_search(&key(c)).unwrap()].push(i);
    }
    lists
}

pub fn param(p: &ModelParams<f64>, id: oacnn_core::ops::ParamId) -> Vec<f64> {
    p.get(id).values().to_vec()
}

pub fn linear(p: &ModelParams<f64>, l: &LinearLayer, x: &Rows) -> Rows {
    let w = param(p, l.w);
    let b = l.b.map(|b| param(p, b));
    x.iter()
        .map(|row| {
            (0..l.d_out)
                .map(|j| {
                    let mut s = b.as_ref().map_or(0.0, |b| b[j]);
                    for (i, &v) in row.iter().enumerate() {
                        s += v * w[i * l.d_out + j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Eval-mode normalization with the stored running statistics.
pub fn norm_eval(p: &ModelParams<f64>, n: &NormLayer, x: &Rows) -> Rows {
    let (scale, shift) = (param(p, n.scale), param(p, n.shift));
    let (mean, var) = (param(p, n.running_mean), param(p, n.running_var));
    x.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| (v - mean[c]) / (var[c] + NORM_EPS).sqrt() * scale[c] + shift[c])
                .collect()
        })
        .collect()
}

pub fn relu(x: Rows) -> Rows {
    x.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn proj(p: &ModelParams<f64>, l: &ProjLayer, x: &Rows) -> Rows {
    relu(norm_eval(p, &l.norm, &linear(p, &l.linear, x)))
}

/// Softmax of each row.
pub fn softmax_rows(x: &Rows) -> Rows {
    x.iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Fills every tensor with random values; running variances stay positive.
pub fn randomize(p: &mut ModelParams<f64>, r: &mut ChaCha8Rng) {
    for t in p.iter_mut() {
        let positive = t.name().ends_with("running_var");
        for v in t.values_mut() {
            *v = if positive { r.random_range(0.5..2.0) } else { r.random_range(-1.0..1.0) };
        }
    }
}

/// One adaptive relation convolution scale by loops: `(grid outputs, lists)`.
pub fn arconv_oracle(
    p: &ModelParams<f64>,
    s: &oacnn_core::arconv::ARConvScaleParams,
    x: &Rows,
    lists: &[Vec<usize>],
) -> Rows {
    let h = proj(p, &s.proj, x);
    let d = x[0].len();
    let mut out = Vec::new();
    for m in lists {
        let ctr: Vec<f64> = (0..d).map(|c| m.iter().map(|&j| h[j][c]).sum::<f64>() / m.len() as f64).collect();
        let diffs: Rows = m.iter().map(|&j| (0..d).map(|c| x[j][c] - ctr[c]).collect()).collect();
        let w = linear(p, &s.weight, &diffs);
        let mut o = vec![0.0; d];
        for c in 0..d {
            let z: f64 = w.iter().map(|r| r[c].exp()).sum();
            for (k, &j) in m.iter().enumerate() {
                o[c] += w[k][c].exp() / z * x[j][c];
            }
        }
        out.push(o);
    }
    out
}

pub fn lists_of(part: &GridPartition) -> Vec<Vec<usize>> {
    (0..part.grid_count()).map(|g| part.members(g).iter().map(|&j| j as usize).collect()).collect()
}
