use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::par::for_each_row;
use crate::scalar::{axpy, dot};
use crate::tape::{Backward, Tape, Var};
use crate::{Matrix, Result, Scalar};

fn check<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: Option<&Matrix<T>>) -> Result<()> {
    if x.cols() != w.rows() {
        return Err(shape_err!("linear: input has {} channels, weight expects {}", x.cols(), w.rows()));
    }
    if let Some(b) = b {
        if b.shape() != (1, w.cols()) {
            return Err(shape_err!("linear: bias {:?} for {} outputs", b.shape(), w.cols()));
        }
    }
    Ok(())
}

/// Row-wise `x w + b`.
pub fn linear<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    check(x, w, b)?;
    let d_out = w.cols();
    let mut out = Matrix::zeros(x.rows(), d_out);
    for_each_row(out.as_mut_slice(), d_out, |i, row| {
        if let Some(b) = b {
            row.copy_from_slice(b.as_slice());
        }
        for (a, &xa) in x.row(i).iter().enumerate() {
            if xa != T::zero() {
                axpy(xa, w.row(a), row);
            }
        }
    });
    Ok(out)
}

pub(crate) fn grad_input<T: Scalar>(g: &Matrix<T>, w: &Matrix<T>) -> Matrix<T> {
    let d_in = w.rows();
    let mut dx = Matrix::zeros(g.rows(), d_in);
    for_each_row(dx.as_mut_slice(), d_in, |i, row| {
        let gi = g.row(i);
        for (a, v) in row.iter_mut().enumerate() {
            *v = dot(gi, w.row(a));
        }
    });
    dx
}

pub(crate) fn grad_weight<T: Scalar>(x: &Matrix<T>, g: &Matrix<T>) -> Matrix<T> {
    let d_out = g.cols();
    let mut dw = Matrix::zeros(x.cols(), d_out);
    for_each_row(dw.as_mut_slice(), d_out, |a, row| {
        for i in 0..x.rows() {
            let xa = x.get(i, a);
            if xa != T::zero() {
                axpy(xa, g.row(i), row);
            }
        }
    });
    dw
}

pub(crate) fn column_sums<T: Scalar>(g: &Matrix<T>) -> Matrix<T> {
    let mut s = vec![T::zero(); g.cols()];
    for i in 0..g.rows() {
        for (acc, &v) in s.iter_mut().zip(g.row(i)) {
            *acc += v;
        }
    }
    Matrix::from_vec(1, g.cols(), s)
}

struct LinearBackward;

impl<T: Scalar> Backward<T> for LinearBackward {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let mut out = Vec::with_capacity(inputs.len());
        out.push(needs[0].then(|| grad_input(g, w)));
        out.push(needs[1].then(|| grad_weight(x, g)));
        if inputs.len() == 3 {
            out.push(needs[2].then(|| column_sums(g)));
        }
        out
    }
}

impl<T: Scalar> Tape<T> {
    pub fn linear(&mut self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let value = linear(x.value(), w.value(), b.map(Var::value))?;
        match b {
            Some(b) => self.push(value, &[x, w, b], LinearBackward),
            None => self.push(value, &[x, w], LinearBackward),
        }
    }
}
