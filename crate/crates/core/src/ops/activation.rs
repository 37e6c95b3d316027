use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Backward, Tape, Var};
use crate::{Matrix, Result, Scalar};

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

struct ReluBackward;

impl<T: Scalar> Backward<T> for ReluBackward {
    fn backward(&self, g: &Matrix<T>, _: &[&Matrix<T>], out: &Matrix<T>, _: &[bool]) -> Vec<Option<Matrix<T>>> {
        let mut dx = g.clone();
        for (d, &y) in dx.as_mut_slice().iter_mut().zip(out.as_slice()) {
            if y <= T::zero() {
                *d = T::zero();
            }
        }
        vec![Some(dx)]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn relu(&mut self, x: &Var<T>) -> Result<Var<T>> {
        self.push(relu(x.value()), &[x], ReluBackward)
    }
}
