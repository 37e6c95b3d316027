use alloc::sync::Arc;
use alloc::vec::Vec;

use super::ParamTensor;
use crate::error::shape_err;
use crate::par::for_each_row;
use crate::scalar::{axpy, dot};
use crate::sparse::KernelMap;
use crate::tape::{Backward, Tape, Var};
use crate::{Matrix, Result, Scalar, SparseTensor};

fn check<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, map: &KernelMap) -> Result<usize> {
    if x.rows() != map.n_in() {
        return Err(shape_err!("conv: {} input rows, kernel map built for {}", x.rows(), map.n_in()));
    }
    let vol = map.kernel_volume();
    if w.rows() != vol * x.cols() {
        return Err(shape_err!(
            "conv: weight has {} rows, expected {} offsets x {} channels",
            w.rows(),
            vol,
            x.cols()
        ));
    }
    Ok(x.cols())
}

/// `out_i = sum over pairs (j -> i, o) of w[o]^T f_j`. The weight is laid out
/// as `volume * d_in` rows by `d_out` columns, offset-major.
pub fn sparse_conv<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, map: &KernelMap) -> Result<Matrix<T>> {
    let d_in = check(x, w, map)?;
    let d_out = w.cols();
    let block = d_in * d_out;
    let wd = w.as_slice();
    let csr = map.by_out();
    let mut out = Matrix::zeros(map.n_out(), d_out);
    for_each_row(out.as_mut_slice(), d_out, |i, row| {
        for &(o, j) in csr.row(i) {
            let wo = &wd[o as usize * block..(o as usize + 1) * block];
            for (a, &xa) in x.row(j as usize).iter().enumerate() {
                if xa != T::zero() {
                    axpy(xa, &wo[a * d_out..(a + 1) * d_out], row);
                }
            }
        }
    });
    Ok(out)
}

fn grad_input<T: Scalar>(g: &Matrix<T>, w: &Matrix<T>, map: &KernelMap, d_in: usize) -> Matrix<T> {
    let d_out = w.cols();
    let block = d_in * d_out;
    let wd = w.as_slice();
    let csr = map.by_in();
    let mut dx = Matrix::zeros(map.n_in(), d_in);
    for_each_row(dx.as_mut_slice(), d_in, |j, row| {
        for &(o, i) in csr.row(j) {
            let wo = &wd[o as usize * block..(o as usize + 1) * block];
            let gi = g.row(i as usize);
            for (a, v) in row.iter_mut().enumerate() {
                *v += dot(&wo[a * d_out..(a + 1) * d_out], gi);
            }
        }
    });
    dx
}

fn grad_weight<T: Scalar>(x: &Matrix<T>, g: &Matrix<T>, map: &KernelMap) -> Matrix<T> {
    let (d_in, d_out) = (x.cols(), g.cols());
    let block = d_in * d_out;
    let mut dw = Matrix::zeros(map.kernel_volume() * d_in, d_out);
    for_each_row(dw.as_mut_slice(), block, |o, blk| {
        for &(j, i) in map.pairs(o) {
            let gi = g.row(i as usize);
            for (a, &xa) in x.row(j as usize).iter().enumerate() {
                if xa != T::zero() {
                    axpy(xa, gi, &mut blk[a * d_out..(a + 1) * d_out]);
                }
            }
        }
    });
    dw
}

/// Submanifold convolution: output voxels are exactly the input voxels.
pub fn submanifold_conv<T: Scalar>(
    x: &SparseTensor<T>,
    w: &ParamTensor<T>,
    map: &KernelMap,
) -> Result<SparseTensor<T>> {
    if !map.is_submanifold() || map.in_stride() != x.stride() {
        return Err(shape_err!("submanifold_conv needs a submanifold map at stride {}", x.stride()));
    }
    let out = sparse_conv(x.features(), w.value(), map)?;
    x.with_features(out)
}

/// Kernel-2, stride-2 downsampling convolution; the output stride doubles.
pub fn strided_conv<T: Scalar>(
    x: &SparseTensor<T>,
    w: &ParamTensor<T>,
    map: &KernelMap,
) -> Result<SparseTensor<T>> {
    if map.is_submanifold() || map.in_stride() != x.stride() {
        return Err(shape_err!("strided_conv needs a strided map at stride {}", x.stride()));
    }
    let out = sparse_conv(x.features(), w.value(), map)?;
    SparseTensor::new(map.out_coords().to_vec(), out, map.out_stride())
}

struct ConvBackward {
    map: Arc<KernelMap>,
}

impl<T: Scalar> Backward<T> for ConvBackward {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        alloc::vec![
            needs[0].then(|| grad_input(g, w, &self.map, x.cols())),
            needs[1].then(|| grad_weight(x, g, &self.map)),
        ]
    }
}

impl<T: Scalar> Tape<T> {
    /// Sparse convolution driven by `map` (submanifold or strided).
    pub fn sparse_conv(&mut self, x: &Var<T>, w: &Var<T>, map: &Arc<KernelMap>) -> Result<Var<T>> {
        let value = sparse_conv(x.value(), w.value(), map)?;
        self.push(value, &[x, w], ConvBackward { map: map.clone() })
    }
}
