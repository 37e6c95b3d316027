use alloc::vec;
use alloc::vec::Vec;

use super::ParamId;
use crate::error::shape_err;
use crate::par::for_each_row;
use crate::tape::{Backward, BatchStats, Tape, Var};
use crate::{Error, Matrix, Result, Scalar};

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

/// Per-channel mean and biased variance.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> NormStats<T> {
    /// Statistics over the rows of `x`.
    pub fn of(x: &Matrix<T>) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![T::zero(); d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        let inv_n = T::one() / T::of(n.max(1) as f64);
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let mut var = vec![T::zero(); d];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                let dv = v - m;
                *s += dv * dv;
            }
        }
        var.iter_mut().for_each(|s| *s *= inv_n);
        Self { mean, var }
    }

    fn inv_std(&self) -> Vec<T> {
        let eps = T::of(NORM_EPS);
        self.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect()
    }
}

fn affine<T: Scalar>(x: &Matrix<T>, mean: &[T], inv: &[T], scale: &[T], shift: &[T]) -> Matrix<T> {
    let d = x.cols();
    let mut y = Matrix::zeros(x.rows(), d);
    for_each_row(y.as_mut_slice(), d, |i, row| {
        for (c, (o, &v)) in row.iter_mut().zip(x.row(i)).enumerate() {
            *o = (v - mean[c]) * inv[c] * scale[c] + shift[c];
        }
    });
    y
}

fn check<T: Scalar>(x: &Matrix<T>, scale: &[T], shift: &[T]) -> Result<()> {
    if scale.len() != x.cols() || shift.len() != x.cols() {
        return Err(shape_err!(
            "normalize: {} channels, scale {} shift {}",
            x.cols(),
            scale.len(),
            shift.len()
        ));
    }
    Ok(())
}

/// Per-channel normalization over voxels followed by `scale`/`shift`.
/// With `stats = None` the batch statistics of `x` are used (training mode),
/// otherwise the given running statistics (evaluation mode). Zero variance is
/// damped by `NORM_EPS`.
pub fn normalize<T: Scalar>(
    x: &Matrix<T>,
    scale: &[T],
    shift: &[T],
    stats: Option<&NormStats<T>>,
) -> Result<Matrix<T>> {
    check(x, scale, shift)?;
    let batch;
    let stats = match stats {
        Some(s) => s,
        None => {
            if x.rows() == 0 {
                return Err(Error::EmptyInput);
            }
            batch = NormStats::of(x);
            &batch
        }
    };
    Ok(affine(x, &stats.mean, &stats.inv_std(), scale, shift))
}

struct BatchNormBackward<T> {
    mean: Vec<T>,
    inv: Vec<T>,
}

impl<T: Scalar> Backward<T> for BatchNormBackward<T> {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let (x, scale) = (inputs[0], inputs[1].as_slice());
        let (n, d) = x.shape();
        let mut sum_g = vec![T::zero(); d];
        let mut sum_gx = vec![T::zero(); d];
        for i in 0..n {
            for c in 0..d {
                let gv = g.get(i, c);
                let xh = (x.get(i, c) - self.mean[c]) * self.inv[c];
                sum_g[c] += gv;
                sum_gx[c] += gv * xh;
            }
        }
        let dx = needs[0].then(|| {
            let nf = T::of(n as f64);
            let mut dx = Matrix::zeros(n, d);
            for_each_row(dx.as_mut_slice(), d, |i, row| {
                for (c, o) in row.iter_mut().enumerate() {
                    let xh = (x.get(i, c) - self.mean[c]) * self.inv[c];
                    *o = scale[c] * self.inv[c] / nf * (nf * g.get(i, c) - sum_g[c] - xh * sum_gx[c]);
                }
            });
            dx
        });
        vec![
            dx,
            needs[1].then(|| Matrix::from_vec(1, d, sum_gx)),
            needs[2].then(|| Matrix::from_vec(1, d, sum_g)),
        ]
    }
}

struct EvalNormBackward<T> {
    mean: Vec<T>,
    inv: Vec<T>,
}

impl<T: Scalar> Backward<T> for EvalNormBackward<T> {
    fn backward(&self, g: &Matrix<T>, inputs: &[&Matrix<T>], _: &Matrix<T>, needs: &[bool]) -> Vec<Option<Matrix<T>>> {
        let (x, scale) = (inputs[0], inputs[1].as_slice());
        let (n, d) = x.shape();
        let mut sum_g = vec![T::zero(); d];
        let mut sum_gx = vec![T::zero(); d];
        for i in 0..n {
            for c in 0..d {
                let gv = g.get(i, c);
                sum_g[c] += gv;
                sum_gx[c] += gv * (x.get(i, c) - self.mean[c]) * self.inv[c];
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = g.clone();
            for_each_row(dx.as_mut_slice(), d, |_, row| {
                for (c, o) in row.iter_mut().enumerate() {
                    *o *= scale[c] * self.inv[c];
                }
            });
            dx
        });
        vec![dx, needs[1].then(|| Matrix::from_vec(1, d, sum_gx)), needs[2].then(|| Matrix::from_vec(1, d, sum_g))]
    }
}

impl<T: Scalar> Tape<T> {
    /// Training-mode normalization. When `running` is given, the observed
    /// statistics are queued for [`ModelParams::apply_batch_stats`](super::ModelParams::apply_batch_stats).
    pub fn batch_norm(
        &mut self,
        x: &Var<T>,
        scale: &Var<T>,
        shift: &Var<T>,
        running: Option<(ParamId, ParamId)>,
    ) -> Result<Var<T>> {
        let xv = x.value();
        check(xv, scale.value().as_slice(), shift.value().as_slice())?;
        if xv.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        let stats = NormStats::of(xv);
        let inv = stats.inv_std();
        let y = affine(xv, &stats.mean, &inv, scale.value().as_slice(), shift.value().as_slice());
        if let Some((running_mean, running_var)) = running {
            let n = xv.rows();
            let unbias = if n > 1 { T::of(n as f64 / (n - 1) as f64) } else { T::one() };
            self.record_stats(BatchStats {
                running_mean,
                running_var,
                mean: stats.mean.clone(),
                var: stats.var.iter().map(|&v| v * unbias).collect(),
            });
        }
        self.push(y, &[x, scale, shift], BatchNormBackward { mean: stats.mean, inv })
    }

    /// Evaluation-mode normalization with fixed statistics.
    pub fn norm_eval(&mut self, x: &Var<T>, scale: &Var<T>, shift: &Var<T>, mean: &[T], var: &[T]) -> Result<Var<T>> {
        let xv = x.value();
        check(xv, scale.value().as_slice(), shift.value().as_slice())?;
        if mean.len() != xv.cols() || var.len() != xv.cols() {
            return Err(shape_err!("normalize: running statistics have wrong length"));
        }
        let stats = NormStats { mean: mean.to_vec(), var: var.to_vec() };
        let inv = stats.inv_std();
        let y = affine(xv, mean, &inv, scale.value().as_slice(), shift.value().as_slice());
        self.push(y, &[x, scale, shift], EvalNormBackward { mean: stats.mean, inv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_gives_shift() {
        let x = Matrix::from_vec(3, 1, vec![4.0, 4.0, 4.0]);
        let y = normalize(&x, &[2.0], &[0.5], None).unwrap();
        assert_eq!(y.as_slice(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn two_voxel_column() {
        let x = Matrix::from_vec(2, 1, vec![0.0, 2.0]);
        let y = normalize(&x, &[1.0], &[0.0], None).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.get(0, 0) + expect).abs() < 1e-12);
        assert!((y.get(1, 0) - expect).abs() < 1e-12);
        assert!((y.get(1, 0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn standardized_input_nearly_unchanged() {
        let x = Matrix::from_vec(4, 1, vec![-1.0, 1.0, -1.0, 1.0]);
        let y = normalize(&x, &[1.0], &[0.0], None).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn eval_mode_uses_given_stats() {
        let x = Matrix::from_vec(2, 1, vec![1.0f64, 3.0]);
        let stats = NormStats { mean: vec![1.0], var: vec![4.0 - 1e-5] };
        let y = normalize(&x, &[1.0], &[0.0], Some(&stats)).unwrap();
        assert!((y.get(1, 0) - 1.0).abs() < 1e-12);
        assert!(y.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_and_shape_errors() {
        assert_eq!(normalize(&Matrix::<f64>::zeros(0, 1), &[1.0], &[0.0], None), Err(Error::EmptyInput));
        assert!(normalize(&Matrix::<f64>::zeros(2, 2), &[1.0], &[0.0], None).is_err());
    }
}
