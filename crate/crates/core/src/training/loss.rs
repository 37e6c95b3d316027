use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::tape::{Backward, Tape, Var};
use crate::{Error, Matrix, Result, Scalar};

/// Labels with this id contribute neither loss nor gradient.
pub const IGNORE_LABEL: u16 = 255;

fn check_labels(labels: &[u16], rows: usize, classes: usize) -> Result<usize> {
    if labels.len() != rows {
        return Err(shape_err!("{} labels for {} logit rows", labels.len(), rows));
    }
    let mut counted = 0;
    for &l in labels {
        if l == IGNORE_LABEL {
            continue;
        }
        if l as usize >= classes {
            return Err(Error::Label { label: l as u32, classes });
        }
        counted += 1;
    }
    Ok(counted)
}

/// Mean softmax cross-entropy over the non-ignored rows, and its gradient
/// `(softmax - onehot) / n`.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[u16]) -> Result<(T, Matrix<T>)> {
    let (rows, c) = logits.shape();
    let counted = check_labels(labels, rows, c)?;
    let mut grad = Matrix::zeros(rows, c);
    if counted == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::of(counted as f64);
    let mut total = 0.0f64;
    for i in 0..rows {
        let l = labels[i];
        if l == IGNORE_LABEL {
            continue;
        }
        let row = logits.row(i);
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + z.ln();
        total += (lse - row[l as usize]).as_f64();
        let g = grad.row_mut(i);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = (row[k] - mx).exp() / z * inv;
        }
        g[l as usize] -= inv;
    }
    Ok((T::of(total / counted as f64), grad))
}

struct CrossEntropyBackward<T> {
    grad: Matrix<T>,
}

impl<T: Scalar> Backward<T> for CrossEntropyBackward<T> {
    fn backward(&self, g: &Matrix<T>, _: &[&Matrix<T>], _: &Matrix<T>, _: &[bool]) -> Vec<Option<Matrix<T>>> {
        let s = g.get(0, 0);
        vec![Some(self.grad.map(|v| v * s))]
    }
}

impl<T: Scalar> Tape<T> {
    /// Scalar (`1 x 1`) cross-entropy loss node.
    pub fn cross_entropy(&mut self, logits: &Var<T>, labels: Arc<[u16]>) -> Result<Var<T>> {
        let (loss, grad) = cross_entropy(logits.value(), &labels)?;
        self.push(Matrix::from_vec(1, 1, vec![loss]), &[logits], CrossEntropyBackward { grad })
    }
}
