//! Shape plumbing: add, subtract, concatenate, gather.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::scalar::axpy;
use crate::tape::{Backward, Tape, Var};
use crate::{Matrix, Result, Scalar};

struct AddBackward {
    sign: f64,
}

impl<T: Scalar> Backward<T> for AddBackward {
    fn backward(&self, g: &Matrix<T>, _: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let s = T::of(self.sign);
        vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| v * s))]
    }
}

struct ConcatBackward {
    left: usize,
}

impl<T: Scalar> Backward<T> for ConcatBackward {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let n = g.rows();
        let right = inputs[1].cols();
        let split = |lo: usize, w: usize| {
            let mut m = Matrix::zeros(n, w);
            for i in 0..n {
                m.row_mut(i).copy_from_slice(&g.row(i)[lo..lo + w]);
            }
            m
        };
        vec![needs[0].then(|| split(0, self.left)), needs[1].then(|| split(self.left, right))]
    }
}

struct GatherBackward {
    index: Arc<[u32]>,
}

impl<T: Scalar> Backward<T> for GatherBackward {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, _: &[bool]) -> Vec<Option<Matrix<T>>> {
        let mut dx = Matrix::zeros(inputs[0].rows(), inputs[0].cols());
        for (i, &src) in self.index.iter().enumerate() {
            axpy(T::one(), g.row(i), dx.row_mut(src as usize));
        }
        vec![Some(dx)]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if a.value().shape() != b.value().shape() {
            return Err(shape_err!("add: {:?} vs {:?}", a.value().shape(), b.value().shape()));
        }
        let mut v = a.value().clone();
        v.add_assign(b.value());
        self.push(v, &[a, b], AddBackward { sign: 1.0 })
    }

    pub fn sub(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if a.value().shape() != b.value().shape() {
            return Err(shape_err!("sub: {:?} vs {:?}", a.value().shape(), b.value().shape()));
        }
        let mut v = a.value().clone();
        for (x, &y) in v.as_mut_slice().iter_mut().zip(b.value().as_slice()) {
            *x -= y;
        }
        self.push(v, &[a, b], AddBackward { sign: -1.0 })
    }

    /// Channel concatenation `[a | b]`.
    pub fn concat(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (av, bv) = (a.value(), b.value());
        if av.rows() != bv.rows() {
            return Err(shape_err!("concat: {} vs {} rows", av.rows(), bv.rows()));
        }
        let w = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * w);
        for i in 0..av.rows() {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        self.push(Matrix::from_vec(av.rows(), w, data), &[a, b], ConcatBackward { left: av.cols() })
    }

    /// `out[i] = x[index[i]]`.
    pub fn gather(&mut self, x: &Var<T>, index: Arc<[u32]>) -> Result<Var<T>> {
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= x.rows()) {
            return Err(shape_err!("gather: row {bad} out of {}", x.rows()));
        }
        let v = x.value().select_rows(&index);
        self.push(v, &[x], GatherBackward { index })
    }
}
