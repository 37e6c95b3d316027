//! Forward-pass timing on random voxel sets.

use std::time::Instant;

use oacnn_core::network::{Model, ModelConfig, Variant};
use oacnn_core::{Matrix, SparseTensor, VoxelCoord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const DEFAULT_DENSITY: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub model: Variant,
    pub voxels: usize,
    pub repeat: usize,
    /// Fraction of occupied cells in the sampled cube.
    pub density: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub voxels: usize,
    pub density: f64,
    pub threads: usize,
    pub repeat: usize,
    /// Seconds per forward pass, topology construction included.
    pub times_s: Vec<f64>,
    pub mean_s: f64,
    pub stddev_s: f64,
    pub voxels_per_sec: f64,
    /// Peak resident set size of the process so far, if the OS reports it.
    pub peak_rss_bytes: Option<u64>,
}

/// `n` distinct voxels drawn uniformly from a cube sized so that a fraction
/// `density` of its cells is occupied, with random RGB-like features.
pub fn random_voxels(n: usize, density: f64, seed: u64) -> Result<SparseTensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = ((n as f64 / density.clamp(1e-6, 1.0)).cbrt().ceil() as usize).max(1);
    let cells = side * side * side;
    let n = n.min(cells);
    let coords: Vec<VoxelCoord> = rand::seq::index::sample(&mut rng, cells, n)
        .into_iter()
        .map(|i| VoxelCoord::new(0, (i % side) as i32, (i / side % side) as i32, (i / (side * side)) as i32))
        .collect();
    let feats = Matrix::from_vec(n, 3, (0..3 * n).map(|_| rng.random::<f32>()).collect());
    Ok(SparseTensor::new(coords, feats, 1)?)
}

/// Reads `VmHWM` from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// One untimed warm-up pass, then `repeat` timed eval-mode forwards.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let config = ModelConfig { seed: cfg.seed, ..ModelConfig::variant(cfg.model, 4) };
    let model = Model::<f32>::new(config)?;
    let x = random_voxels(cfg.voxels, cfg.density, cfg.seed)?;
    model.predict(&x)?;
    let mut times = Vec::with_capacity(cfg.repeat);
    for _ in 0..cfg.repeat.max(1) {
        let t = Instant::now();
        std::hint::black_box(model.predict(&x)?);
        times.push(t.elapsed().as_secs_f64());
    }
    let k = times.len() as f64;
    let mean = times.iter().sum::<f64>() / k;
    let var = if times.len() > 1 { times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    Ok(BenchReport {
        model: cfg.model.name().into(),
        voxels: x.len(),
        density: cfg.density,
        threads: rayon::current_num_threads(),
        repeat: times.len(),
        times_s: times,
        mean_s: mean,
        stddev_s: var.sqrt(),
        voxels_per_sec: x.len() as f64 / mean,
        peak_rss_bytes: peak_rss_bytes(),
    })
}
