//! Central-difference gradient checks in 64-bit.
//!
//! Every check is phrased over a [`ModelParams`]: the inputs of a single op
//! are registered as tensors too, so one harness compares the tape gradient
//! of `<f(theta), R>` (fixed random `R`) against finite differences for every
//! trainable scalar.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{aggregate, AggregatorParams};
use crate::arconv::{arconv_on, ARConvScaleParams};
use crate::geometry::{partition, GridPartition, VoxelCoord};
use crate::network::{Model, ModelConfig, Topology};
use crate::ops::{Ctx, ModelParams, NormMode, ParamId, ParamKind};
use crate::sparse::{build_strided_map, build_submanifold_map};
use crate::tape::{Tape, Var};
use crate::{Error, Matrix, Result, SparseTensor};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(theta + h e_i) - f(theta - h e_i)) / 2h` for every coordinate.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..t.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = f(&t);
            t[i] = orig - h;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Scalar with the largest error, as `tensor[flat index]`.
    pub worst: String,
    /// Analytic and numeric values at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Ops,
    Arconv,
    Aggregator,
    Network,
    All,
}

impl core::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ops" => Scope::Ops,
            "arconv" => Scope::Arconv,
            "aggregator" => Scope::Aggregator,
            "network" => Scope::Network,
            "all" => Scope::All,
            _ => return Err(Error::Config(format!("unknown gradcheck scope {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Adds an error to one analytic gradient entry so the check must fail.
    pub corrupt: bool,
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// Away from zero, so ReLU kinks stay further than `FD_STEP` away.
fn random_signed<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix<f64> {
    let mut m = random_matrix(rng, rows, cols, 0.2, 1.0);
    for v in m.as_mut_slice() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    m
}

fn random_cloud<R: Rng>(rng: &mut R, n: usize, extent: i32) -> Vec<VoxelCoord> {
    let mut c: Vec<VoxelCoord> = Vec::new();
    while c.len() < n {
        let v = VoxelCoord::new(0, rng.random_range(0..extent), rng.random_range(0..extent), rng.random_range(0..extent));
        if !c.contains(&v) {
            c.push(v);
        }
    }
    c.sort();
    c
}

/// Compares tape gradients of `<f(params), R>` against central differences.
pub fn check<F>(name: &str, params: &ModelParams<f64>, mode: NormMode, opts: CheckOptions, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var<f64>>,
{
    let mut tape = Tape::new();
    let (out, r) = {
        let mut ctx = Ctx::new(&mut tape, params, mode);
        let out = f(&mut ctx)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        let r = if out.value().shape() == (1, 1) {
            Matrix::filled(1, 1, 1.0)
        } else {
            let scale = 1.0 / out.rows() as f64;
            random_matrix(&mut rng, out.rows(), out.cols(), -scale, scale)
        };
        (out, r)
    };
    let grads = tape.backward_with(&out, r.clone())?;
    let mut analytic: Vec<Option<Matrix<f64>>> = vec![None; params.len()];
    for (id, g) in grads.params() {
        analytic[id.index()] = g.cloned();
    }
    drop(out);
    drop(tape);

    let objective = |p: &ModelParams<f64>| -> Result<f64> {
        let mut tape = Tape::inference();
        let mut ctx = Ctx::new(&mut tape, p, mode);
        let out = f(&mut ctx)?;
        Ok(out.value().as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum())
    };

    let mut work = params.clone();
    let mut report = CheckReport { name: name.into(), max_rel_err: 0.0, worst: String::new(), worst_values: (0.0, 0.0), checked: 0 };
    let mut corrupted = !opts.corrupt;
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if !params.get(id).is_trainable() {
            continue;
        }
        let n = params.get(id).numel();
        let zero = Matrix::zeros(1, n);
        let mut a = analytic[id.index()].clone().unwrap_or(zero);
        if !corrupted {
            let v = &mut a.as_mut_slice()[0];
            *v += 1e-2 * v.abs().max(1.0);
            corrupted = true;
        }
        for i in 0..n {
            let orig = work.get(id).values()[i];
            work.get_mut(id).values_mut()[i] = orig + FD_STEP;
            let up = objective(&work)?;
            work.get_mut(id).values_mut()[i] = orig - FD_STEP;
            let down = objective(&work)?;
            work.get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_error(a.as_slice()[i], numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = format!("{}[{i}]", params.get(id).name());
                report.worst_values = (a.as_slice()[i], numeric);
            }
        }
    }
    Ok(report)
}

fn input(p: &mut ModelParams<f64>, name: &str, m: Matrix<f64>) -> Result<ParamId> {
    let shape = [m.rows(), m.cols()];
    p.register(name, &shape, ParamKind::Weight, m)
}

/// Moves every tensor still at a constant initial value (zero biases and
/// shifts, unit scales, the zero preference head) to a generic point. At the
/// constant start, voxels with an all-zero neighbourhood sit exactly on a
/// ReLU kink, where one-sided differences disagree with any subgradient.
fn generic_point<R: Rng>(p: &mut ModelParams<f64>, rng: &mut R) {
    for t in p.iter_mut() {
        let vals = t.values();
        if t.is_trainable() && vals.iter().all(|&v| v == vals[0]) {
            for v in t.values_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
}

fn ops_checks(opts: CheckOptions) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    let mut first = true;
    let mut next_opts = || {
        let o = CheckOptions { corrupt: opts.corrupt && first, ..opts };
        first = false;
        o
    };
    let train = NormMode::Train;

    let mut p = ModelParams::new(0);
    let x = input(&mut p, "x", random_signed(&mut rng, 6, 4))?;
    let w = input(&mut p, "w", random_signed(&mut rng, 4, 3))?;
    let b = input(&mut p, "b", random_signed(&mut rng, 1, 3))?;
    out.push(check("linear", &p, train, next_opts(), |c| {
        let (x, w, b) = (c.param(x), c.param(w), c.param(b));
        c.tape.linear(&x, &w, Some(&b))
    })?);
    let y = input(&mut p, "y", random_signed(&mut rng, 6, 4))?;
    out.push(check("add", &p, train, next_opts(), |c| {
        let (x, y) = (c.param(x), c.param(y));
        c.tape.add(&x, &y)
    })?);
    out.push(check("sub", &p, train, next_opts(), |c| {
        let (x, y) = (c.param(x), c.param(y));
        c.tape.sub(&x, &y)
    })?);
    out.push(check("concat", &p, train, next_opts(), |c| {
        let (x, w) = (c.param(x), c.param(y));
        c.tape.concat(&x, &w)
    })?);
    let idx: Arc<[u32]> = vec![3u32, 0, 0, 5, 2, 3, 3].into();
    out.push(check("gather", &p, train, next_opts(), |c| {
        let x = c.param(x);
        c.tape.gather(&x, idx.clone())
    })?);
    out.push(check("relu", &p, train, next_opts(), |c| {
        let x = c.param(x);
        c.tape.relu(&x)
    })?);
    out.push(check("row_softmax", &p, train, next_opts(), |c| {
        let x = c.param(x);
        c.tape.row_softmax(&x)
    })?);

    let mut p = ModelParams::new(0);
    let x = input(&mut p, "x", random_signed(&mut rng, 10, 3))?;
    let s = input(&mut p, "scale", random_matrix(&mut rng, 1, 3, 0.5, 1.5))?;
    let t = input(&mut p, "shift", random_signed(&mut rng, 1, 3))?;
    out.push(check("batch_norm", &p, train, next_opts(), |c| {
        let (x, s, t) = (c.param(x), c.param(s), c.param(t));
        c.tape.batch_norm(&x, &s, &t, None)
    })?);
    out.push(check("norm_eval", &p, train, next_opts(), |c| {
        let (x, s, t) = (c.param(x), c.param(s), c.param(t));
        c.tape.norm_eval(&x, &s, &t, &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0])
    })?);
    let labels: Arc<[u16]> = vec![0u16, 2, 1, 1, 0, 2, 2, 1, 0, 1].into();
    out.push(check("cross_entropy", &p, train, next_opts(), |c| {
        let x = c.param(x);
        c.tape.cross_entropy(&x, labels.clone())
    })?);

    let coords = random_cloud(&mut rng, 20, 4);
    let subm = Arc::new(build_submanifold_map(&coords, 1, 3)?);
    let strided = Arc::new(build_strided_map(&coords, 1)?);
    let mut p = ModelParams::new(0);
    let x = input(&mut p, "x", random_signed(&mut rng, 20, 3))?;
    let ws = input(&mut p, "w_subm", random_signed(&mut rng, 27 * 3, 2))?;
    let wd = input(&mut p, "w_strided", random_signed(&mut rng, 8 * 3, 2))?;
    out.push(check("submanifold_conv", &p, train, next_opts(), |c| {
        let (x, w) = (c.param(x), c.param(ws));
        c.tape.sparse_conv(&x, &w, &subm)
    })?);
    out.push(check("strided_conv", &p, train, next_opts(), |c| {
        let (x, w) = (c.param(x), c.param(wd));
        c.tape.sparse_conv(&x, &w, &strided)
    })?);

    let parts: Vec<Arc<GridPartition>> =
        vec![Arc::new(partition(&coords, 1, 2)?), Arc::new(partition(&coords, 1, 4)?)];
    let mut p = ModelParams::new(0);
    let x = input(&mut p, "x", random_signed(&mut rng, 20, 3))?;
    let wk = input(&mut p, "w", random_signed(&mut rng, 20, 3))?;
    let mix = input(&mut p, "mix", random_matrix(&mut rng, 20, 2, 0.1, 1.0))?;
    let o0 = input(&mut p, "o0", random_signed(&mut rng, parts[0].grid_count(), 3))?;
    let o1 = input(&mut p, "o1", random_signed(&mut rng, parts[1].grid_count(), 3))?;
    let part = parts[0].clone();
    out.push(check("grid_mean", &p, train, next_opts(), |c| {
        let x = c.param(x);
        c.tape.grid_mean(&x, &part)
    })?);
    out.push(check("segment_softmax", &p, train, next_opts(), |c| {
        let w = c.param(wk);
        c.tape.segment_softmax(&w, &part)
    })?);
    out.push(check("grid_depthwise", &p, train, next_opts(), |c| {
        let (w, x) = (c.param(wk), c.param(x));
        c.tape.grid_depthwise(&w, &x, &part)
    })?);
    out.push(check("broadcast_mix", &p, train, next_opts(), |c| {
        let (m, a, b) = (c.param(mix), c.param(o0), c.param(o1));
        c.tape.broadcast_mix(&m, &[a, b], &parts)
    })?);
    Ok(out)
}

fn block_fixture(seed: u64, d: usize, n: usize) -> (ChaCha8Rng, Vec<VoxelCoord>, Matrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = random_cloud(&mut rng, n, 5);
    let x = random_signed(&mut rng, n, d);
    (rng, coords, x)
}

fn arconv_check(opts: CheckOptions) -> Result<CheckReport> {
    let (mut rng, coords, x) = block_fixture(opts.seed, 8, 30);
    let part = Arc::new(partition(&coords, 1, 4)?);
    let mut p = ModelParams::new(opts.seed);
    let xi = input(&mut p, "x", x)?;
    let sp = ARConvScaleParams::register(&mut p, &mut rng, "arconv", 8)?;
    check("arconv", &p, NormMode::Train, opts, |c| {
        let x = c.param(xi);
        arconv_on(c, &x, &part, &sp)
    })
}

fn aggregator_check(opts: CheckOptions) -> Result<CheckReport> {
    let (mut rng, coords, x) = block_fixture(opts.seed, 8, 30);
    let parts = vec![Arc::new(partition(&coords, 1, 2)?), Arc::new(partition(&coords, 1, 4)?)];
    let mut p = ModelParams::new(opts.seed);
    let xi = input(&mut p, "x", x)?;
    let scales = (0..2)
        .map(|k| ARConvScaleParams::register(&mut p, &mut rng, &format!("arconv{k}"), 8))
        .collect::<Result<Vec<_>>>()?;
    let agg = AggregatorParams::register(&mut p, &mut rng, "agg", 8, &[2, 4], true)?;
    generic_point(&mut p, &mut rng);
    check("aggregator", &p, NormMode::Train, opts, |c| {
        let x = c.param(xi);
        Ok(aggregate(c, &x, &parts, &scales, &agg)?.0)
    })
}

/// Two stages of width 8, one block each, two grid sizes, two classes.
pub fn micro_check_config(seed: u64) -> ModelConfig {
    ModelConfig {
        blocks_per_stage: vec![1, 1],
        channels_per_stage: vec![8, 8],
        grid_sizes_per_stage: vec![vec![2, 4], vec![1, 2]],
        in_channels: 3,
        num_classes: 2,
        voxel_size: 0.05,
        seed,
        residual: true,
        adaptive_aggregator: true,
    }
}

fn network_check(opts: CheckOptions) -> Result<CheckReport> {
    let (mut rng, coords, x) = block_fixture(opts.seed, 3, 30);
    let labels: Arc<[u16]> = (0..30).map(|_| rng.random_range(0..2u16)).collect::<Vec<_>>().into();
    let cfg = micro_check_config(opts.seed);
    let mut model = Model::<f64>::new(cfg.clone())?;
    generic_point(&mut model.params, &mut rng);
    let tensor = SparseTensor::new(coords, x, 1)?;
    let topo = Topology::build(tensor.coords(), &cfg)?;
    let feats = tensor.features().clone();
    let layout = model.layout.clone();
    check("network", &model.params, NormMode::Train, opts, |c| {
        let f = c.tape.constant(feats.clone());
        let out = crate::network::model_forward(c, &f, &layout, &topo, cfg.residual)?;
        c.tape.cross_entropy(&out.logits, labels.clone())
    })
}

/// Runs the checks in `scope`; with `corrupt` set, the first check of the
/// scope sees one falsified analytic entry.
pub fn run_scope(scope: Scope, opts: CheckOptions) -> Result<Vec<CheckReport>> {
    Ok(match scope {
        Scope::Ops => ops_checks(opts)?,
        Scope::Arconv => vec![arconv_check(opts)?],
        Scope::Aggregator => vec![aggregator_check(opts)?],
        Scope::Network => vec![network_check(opts)?],
        Scope::All => {
            let rest = CheckOptions { corrupt: false, ..opts };
            let mut v = ops_checks(opts)?;
            v.push(arconv_check(rest)?);
            v.push(aggregator_check(rest)?);
            v.push(network_check(rest)?);
            v
        }
    })
}
