use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tape::{BatchStats, Gradients};
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(u32);

impl ParamId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Learned by the optimizer.
    Weight,
    /// Running statistics; saved with the model but never optimized.
    Buffer,
}

/// A named parameter tensor. Values are stored as a matrix whose column count
/// is the last dimension of `shape`.
#[derive(Clone, Debug)]
pub struct ParamTensor<T> {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    value: Arc<Matrix<T>>,
    grad: Matrix<T>,
}

pub(crate) fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        None => (1, 1),
        Some((&last, rest)) => (rest.iter().product(), last),
    }
}

impl<T: Scalar> ParamTensor<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Weight
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn value(&self) -> &Matrix<T> {
        &self.value
    }

    pub(crate) fn value_arc(&self) -> Arc<Matrix<T>> {
        self.value.clone()
    }

    pub fn values(&self) -> &[T] {
        self.value.as_slice()
    }

    /// Copy-on-write if a tape still holds the old value.
    pub fn values_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.value).as_mut_slice()
    }

    pub fn grad(&self) -> &Matrix<T> {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Matrix<T> {
        &mut self.grad
    }

    pub(crate) fn values_and_grad_mut(&mut self) -> (&mut [T], &[T]) {
        (Arc::make_mut(&mut self.value).as_mut_slice(), self.grad.as_slice())
    }
}

/// All parameters of a model, in registration order.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    tensors: Vec<ParamTensor<T>>,
    seed: u64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(seed: u64) -> Self {
        Self { tensors: Vec::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        kind: ParamKind,
        value: Matrix<T>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let dims = matrix_dims(shape);
        if value.shape() != dims {
            return Err(Error::Shape(format!(
                "{name}: shape {shape:?} needs {dims:?}, got {:?}",
                value.shape()
            )));
        }
        let id = ParamId(self.tensors.len() as u32);
        self.tensors.push(ParamTensor {
            name,
            shape: shape.to_vec(),
            kind,
            grad: Matrix::zeros(dims.0, dims.1),
            value: Arc::new(value),
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.tensors[id.index()]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(|i| ParamId(i as u32))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.tensors.iter_mut()
    }

    /// Number of learned scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.is_trainable()).map(ParamTensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.as_mut_slice().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the parameter gradients of one backward pass.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            if let Some(g) = g {
                self.tensors[id.index()].grad.add_assign(g);
            }
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch` for every
    /// set of statistics, in order.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats<T>], momentum: f64) {
        let m = T::of(momentum);
        let keep = T::one() - m;
        for s in stats {
            for (id, batch) in [(s.running_mean, &s.mean), (s.running_var, &s.var)] {
                for (r, &b) in self.tensors[id.index()].values_mut().iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    kind: t.kind,
                    value: Arc::new(t.value.cast()),
                    grad: t.grad.cast(),
                })
                .collect(),
            seed: self.seed,
        }
    }
}
