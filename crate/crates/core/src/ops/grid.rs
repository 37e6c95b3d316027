//! Per-grid reductions over a [`GridPartition`].

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::geometry::GridPartition;
use crate::par::for_each_row;
use crate::scalar::{axpy, dot};
use crate::tape::{Backward, Tape, Var};
use crate::{Error, Matrix, Result, Scalar};

fn check_rows<T: Scalar>(what: &str, x: &Matrix<T>, part: &GridPartition) -> Result<()> {
    if x.rows() != part.len() {
        return Err(shape_err!("{what}: {} rows but partition covers {} voxels", x.rows(), part.len()));
    }
    Ok(())
}

/// Mean feature of each grid (`N_grids x d`).
pub fn grid_avg_pool<T: Scalar>(x: &Matrix<T>, part: &GridPartition) -> Result<Matrix<T>> {
    check_rows("grid_avg_pool", x, part)?;
    let d = x.cols();
    let mut out = Matrix::zeros(part.grid_count(), d);
    for_each_row(out.as_mut_slice(), d, |g, row| {
        let members = part.members(g);
        for &j in members {
            axpy(T::one(), x.row(j as usize), row);
        }
        let inv = T::one() / T::of(members.len() as f64);
        row.iter_mut().for_each(|v| *v *= inv);
    });
    Ok(out)
}

/// Channel-wise softmax over the members of each grid. The shift is the
/// largest entry of the whole grid (all members, all channels); a channel
/// whose terms all underflow under that shift falls back to its own maximum.
pub fn segment_softmax<T: Scalar>(w: &Matrix<T>, part: &GridPartition) -> Result<Matrix<T>> {
    check_rows("segment_softmax", w, part)?;
    if !w.is_finite() {
        return Err(Error::Numeric("dynamic kernel weights"));
    }
    let d = w.cols();
    let mut out = Matrix::zeros(w.rows(), d);
    let mut denom = vec![T::zero(); d];
    for g in 0..part.grid_count() {
        let members = part.members(g);
        let mut m = T::neg_infinity();
        for &j in members {
            for &v in w.row(j as usize) {
                m = m.max(v);
            }
        }
        denom.iter_mut().for_each(|s| *s = T::zero());
        for &j in members {
            let j = j as usize;
            for c in 0..d {
                let e = (w.get(j, c) - m).exp();
                out.set(j, c, e);
                denom[c] += e;
            }
        }
        for c in 0..d {
            if !(denom[c] >= T::min_positive_value()) {
                let mc = members.iter().fold(T::neg_infinity(), |a, &j| a.max(w.get(j as usize, c)));
                denom[c] = T::zero();
                for &j in members {
                    let e = (w.get(j as usize, c) - mc).exp();
                    out.set(j as usize, c, e);
                    denom[c] += e;
                }
            }
        }
        for &j in members {
            for (v, &s) in out.row_mut(j as usize).iter_mut().zip(&denom) {
                *v /= s;
            }
        }
    }
    Ok(out)
}

/// Depthwise grid convolution with per-member kernel weights:
/// `o[g, c] = sum_j w[j, c] * x[j, c]` over the members `j` of grid `g`.
pub fn grid_depthwise<T: Scalar>(w: &Matrix<T>, x: &Matrix<T>, part: &GridPartition) -> Result<Matrix<T>> {
    check_rows("grid_depthwise", x, part)?;
    if w.shape() != x.shape() {
        return Err(shape_err!("grid_depthwise: weights {:?} vs features {:?}", w.shape(), x.shape()));
    }
    let d = x.cols();
    let mut out = Matrix::zeros(part.grid_count(), d);
    for_each_row(out.as_mut_slice(), d, |g, row| {
        for &j in part.members(g) {
            let j = j as usize;
            for ((o, &wv), &xv) in row.iter_mut().zip(w.row(j)).zip(x.row(j)) {
                *o += wv * xv;
            }
        }
    });
    Ok(out)
}

/// `out[i] = sum_k weights[i, k] * outs[k][grid_k(i)]`, summing `k` in
/// ascending order.
pub fn broadcast_mix<T: Scalar>(
    weights: &Matrix<T>,
    outs: &[&Matrix<T>],
    parts: &[&GridPartition],
) -> Result<Matrix<T>> {
    let k = outs.len();
    if k == 0 || parts.len() != k || weights.cols() != k {
        return Err(shape_err!(
            "broadcast_mix: {} scale outputs, {} partitions, {} weight columns",
            k,
            parts.len(),
            weights.cols()
        ));
    }
    let d = outs[0].cols();
    for (o, p) in outs.iter().zip(parts) {
        if o.rows() != p.grid_count() || o.cols() != d || p.len() != weights.rows() {
            return Err(shape_err!("broadcast_mix: scale output does not match its partition"));
        }
    }
    let mut out = Matrix::zeros(weights.rows(), d);
    for_each_row(out.as_mut_slice(), d, |i, row| {
        for s in 0..k {
            axpy(weights.get(i, s), outs[s].row(parts[s].grid_of(i)), row);
        }
    });
    Ok(out)
}

/// Row-wise softmax.
pub fn row_softmax<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let d = x.cols();
    let mut out = x.clone();
    for_each_row(out.as_mut_slice(), d, |_, row| {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    });
    out
}

struct GridMeanBackward {
    part: Arc<GridPartition>,
}

impl<T: Scalar> Backward<T> for GridMeanBackward {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, _: &[bool]) -> Vec<Option<Matrix<T>>> {
        let d = g.cols();
        let mut dx = Matrix::zeros(inputs[0].rows(), d);
        let part = &*self.part;
        for_each_row(dx.as_mut_slice(), d, |j, row| {
            let grid = part.grid_of(j);
            let inv = T::one() / T::of(part.members(grid).len() as f64);
            for (o, &v) in row.iter_mut().zip(g.row(grid)) {
                *o = v * inv;
            }
        });
        vec![Some(dx)]
    }
}

struct SegmentSoftmaxBackward {
    part: Arc<GridPartition>,
}

impl<T: Scalar> Backward<T> for SegmentSoftmaxBackward {
    fn backward(&self, g: &Matrix<T>, _: &[&Matrix<T>], y: &Matrix<T>, _: &[bool]) -> Vec<Option<Matrix<T>>> {
        let d = g.cols();
        let mut dw = Matrix::zeros(g.rows(), d);
        let mut s = vec![T::zero(); d];
        for grid in 0..self.part.grid_count() {
            let members = self.part.members(grid);
            s.iter_mut().for_each(|v| *v = T::zero());
            for &j in members {
                for (c, acc) in s.iter_mut().enumerate() {
                    *acc += y.get(j as usize, c) * g.get(j as usize, c);
                }
            }
            for &j in members {
                let j = j as usize;
                for c in 0..d {
                    dw.set(j, c, y.get(j, c) * (g.get(j, c) - s[c]));
                }
            }
        }
        vec![Some(dw)]
    }
}

struct DepthwiseBackward {
    part: Arc<GridPartition>,
}

impl<T: Scalar> Backward<T> for DepthwiseBackward {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let (w, x) = (inputs[0], inputs[1]);
        let d = x.cols();
        let part = &*self.part;
        let scaled = |other: &Matrix<T>| {
            let mut m = Matrix::zeros(other.rows(), d);
            for_each_row(m.as_mut_slice(), d, |j, row| {
                let gg = g.row(part.grid_of(j));
                for ((o, &a), &b) in row.iter_mut().zip(gg).zip(other.row(j)) {
                    *o = a * b;
                }
            });
            m
        };
        vec![needs[0].then(|| scaled(x)), needs[1].then(|| scaled(w))]
    }
}

struct MixBackward {
    parts: Vec<Arc<GridPartition>>,
}

impl<T: Scalar> Backward<T> for MixBackward {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let w = inputs[0];
        let outs = &inputs[1..];
        let k = outs.len();
        let mut res = Vec::with_capacity(k + 1);
        res.push(needs[0].then(|| {
            let mut dw = Matrix::zeros(w.rows(), k);
            for_each_row(dw.as_mut_slice(), k, |i, row| {
                for (s, v) in row.iter_mut().enumerate() {
                    *v = dot(g.row(i), outs[s].row(self.parts[s].grid_of(i)));
                }
            });
            dw
        }));
        for s in 0..k {
            res.push(needs[s + 1].then(|| {
                let part = &*self.parts[s];
                let mut d_o = Matrix::zeros(outs[s].rows(), outs[s].cols());
                for_each_row(d_o.as_mut_slice(), outs[s].cols(), |grid, row| {
                    for &i in part.members(grid) {
                        axpy(w.get(i as usize, s), g.row(i as usize), row);
                    }
                });
                d_o
            }));
        }
        res
    }
}

struct RowSoftmaxBackward;

impl<T: Scalar> Backward<T> for RowSoftmaxBackward {
    fn backward(&self, g: &Matrix<T>, _: &[&Matrix<T>], y: &Matrix<T>, _: &[bool]) -> Vec<Option<Matrix<T>>> {
        let d = g.cols();
        let mut dx = Matrix::zeros(g.rows(), d);
        for_each_row(dx.as_mut_slice(), d, |i, row| {
            let (yi, gi) = (y.row(i), g.row(i));
            let s = dot(yi, gi);
            for ((o, &a), &b) in row.iter_mut().zip(yi).zip(gi) {
                *o = a * (b - s);
            }
        });
        vec![Some(dx)]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn grid_mean(&mut self, x: &Var<T>, part: &Arc<GridPartition>) -> Result<Var<T>> {
        let v = grid_avg_pool(x.value(), part)?;
        self.push(v, &[x], GridMeanBackward { part: part.clone() })
    }

    pub fn segment_softmax(&mut self, w: &Var<T>, part: &Arc<GridPartition>) -> Result<Var<T>> {
        let v = segment_softmax(w.value(), part)?;
        self.push(v, &[w], SegmentSoftmaxBackward { part: part.clone() })
    }

    pub fn grid_depthwise(&mut self, w: &Var<T>, x: &Var<T>, part: &Arc<GridPartition>) -> Result<Var<T>> {
        let v = grid_depthwise(w.value(), x.value(), part)?;
        self.push(v, &[w, x], DepthwiseBackward { part: part.clone() })
    }

    pub fn broadcast_mix(&mut self, weights: &Var<T>, outs: &[Var<T>], parts: &[Arc<GridPartition>]) -> Result<Var<T>> {
        let ov: Vec<&Matrix<T>> = outs.iter().map(Var::value).collect();
        let pv: Vec<&GridPartition> = parts.iter().map(|p| &**p).collect();
        let v = broadcast_mix(weights.value(), &ov, &pv)?;
        let mut inputs = Vec::with_capacity(outs.len() + 1);
        inputs.push(weights);
        inputs.extend(outs.iter());
        self.push(v, &inputs, MixBackward { parts: parts.to_vec() })
    }

    pub fn row_softmax(&mut self, x: &Var<T>) -> Result<Var<T>> {
        self.push(row_softmax(x.value()), &[x], RowSoftmaxBackward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{partition, VoxelCoord};

    fn part(coords: &[(i32, i32, i32)], g: u32) -> GridPartition {
        let c: Vec<VoxelCoord> = coords.iter().map(|&(x, y, z)| VoxelCoord::new(0, x, y, z)).collect();
        partition(&c, 1, g).unwrap()
    }

    #[test]
    fn avg_pool_cases() {
        let p = part(&[(0, 0, 0)], 4);
        let x = Matrix::from_vec(1, 2, vec![1.5, -2.0]);
        assert_eq!(grid_avg_pool(&x, &p).unwrap(), x);
        let p = part(&[(0, 0, 0), (1, 0, 0)], 4);
        let x = Matrix::from_vec(2, 2, vec![1.0, 3.0, 3.0, 5.0]);
        assert_eq!(grid_avg_pool(&x, &p).unwrap().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn softmax_singleton_is_one() {
        let p = part(&[(0, 0, 0), (9, 9, 9)], 4);
        let w = Matrix::from_vec(2, 3, vec![5.0, -3.0, 0.1, 100.0, 0.0, -7.0]);
        let y = segment_softmax(&w, &p).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn softmax_hand_values() {
        let p = part(&[(0, 0, 0), (1, 0, 0)], 4);
        let w = Matrix::from_vec(2, 2, vec![0.0, 1000.0, 2f64.ln(), 1000.0]);
        let y = segment_softmax(&w, &p).unwrap();
        assert!((y.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((y.get(0, 1), y.get(1, 1)), (0.5, 0.5));
    }

    #[test]
    fn softmax_underflowing_channel_falls_back() {
        let p = part(&[(0, 0, 0), (1, 0, 0)], 4);
        let w = Matrix::from_vec(2, 2, vec![0.0, 2000.0, 0.0, 2000.0]);
        let y = segment_softmax(&w, &p).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let p = part(&[(0, 0, 0)], 4);
        let w = Matrix::from_vec(1, 1, vec![f64::INFINITY]);
        assert_eq!(segment_softmax(&w, &p), Err(Error::Numeric("dynamic kernel weights")));
    }

    #[test]
    fn depthwise_uniform_weights_give_mean() {
        let p = part(&[(0, 0, 0), (1, 0, 0), (2, 0, 0)], 4);
        let x = Matrix::from_vec(3, 1, vec![1.0f64, 2.0, 6.0]);
        let w = Matrix::filled(3, 1, 1.0 / 3.0);
        let o = grid_depthwise(&w, &x, &p).unwrap();
        assert!((o.get(0, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn row_softmax_uniform_and_saturated() {
        let y = row_softmax(&Matrix::from_vec(2, 3, vec![0.0f64, 0.0, 0.0, 50.0, 0.0, 0.0]));
        for c in 0..3 {
            assert!((y.get(0, c) - 1.0 / 3.0).abs() < 1e-16);
        }
        assert!((y.get(1, 0) - 1.0).abs() < 1e-20);
        assert!(y.get(1, 1) < 1e-20);
    }
}
