//! Reverse-mode gradient tape.
//!
//! Every differentiable op pushes one node holding its output value and a
//! backward rule. Nodes are appended in execution order, which is already a
//! topological order, so [`Tape::backward`] walks the node list once from the
//! loss down to the leaves.
//!
//! A tape built with [`Tape::inference`] records nothing: values are computed
//! and dropped with their [`Var`] handles.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::shape_err;
use crate::ops::{ModelParams, ParamId};
use crate::{Error, Matrix, Result, Scalar};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value produced on a tape.
#[derive(Clone, Debug)]
pub struct Var<T> {
    node: Option<u32>,
    tape: u64,
    value: Arc<Matrix<T>>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Matrix<T> {
        &self.value
    }

    pub fn value_arc(&self) -> Arc<Matrix<T>> {
        self.value.clone()
    }

    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    pub fn cols(&self) -> usize {
        self.value.cols()
    }

    pub fn is_recorded(&self) -> bool {
        self.node.is_some()
    }
}

/// Backward rule of one node. `inputs` are the input values in push order;
/// a gradient is returned for input `k` only when `needs[k]` is set.
pub(crate) trait Backward<T: Scalar>: Send + Sync {
    fn backward(
        &self,
        grad: &Matrix<T>,
        inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        needs: &[bool],
    ) -> Vec<Option<Matrix<T>>>;
}

struct Node<T: Scalar> {
    inputs: Vec<u32>,
    rule: Option<Box<dyn Backward<T>>>,
    param: Option<ParamId>,
    requires_grad: bool,
    value: Arc<Matrix<T>>,
}

/// Per-channel batch statistics observed by a training-mode normalization,
/// for the running-average update applied after the step.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<T>,
    /// Unbiased variance (biased when only one row was seen).
    pub var: Vec<T>,
}

pub struct Tape<T: Scalar> {
    id: u64,
    recording: bool,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<u32>>,
    stats: Vec<BatchStats<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            stats: Vec::new(),
        }
    }

    /// A tape that only evaluates.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Arc<Matrix<T>>, param: Option<ParamId>, requires_grad: bool) -> Var<T> {
        if !self.recording {
            return Var { node: None, tape: self.id, value };
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { inputs: Vec::new(), rule: None, param, requires_grad, value: value.clone() });
        Var { node: Some(id), tape: self.id, value }
    }

    /// Input that receives a gradient (for checking gradients with respect
    /// to data).
    pub fn input(&mut self, value: Matrix<T>) -> Var<T> {
        self.leaf(Arc::new(value), None, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var<T> {
        self.leaf(Arc::new(value), None, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id return
    /// the same node.
    pub fn param(&mut self, params: &ModelParams<T>, id: ParamId) -> Var<T> {
        if let Some(Some(node)) = self.param_nodes.get(id.index()) {
            let value = self.nodes[*node as usize].value.clone();
            return Var { node: Some(*node), tape: self.id, value };
        }
        let t = params.get(id);
        let var = self.leaf(t.value_arc(), Some(id), t.is_trainable());
        if let Some(node) = var.node {
            if self.param_nodes.len() <= id.index() {
                self.param_nodes.resize(id.index() + 1, None);
            }
            self.param_nodes[id.index()] = Some(node);
        }
        var
    }

    pub(crate) fn push<B: Backward<T> + 'static>(
        &mut self,
        value: Matrix<T>,
        inputs: &[&Var<T>],
        rule: B,
    ) -> Result<Var<T>> {
        let value = Arc::new(value);
        if !self.recording {
            return Ok(Var { node: None, tape: self.id, value });
        }
        let mut ids = Vec::with_capacity(inputs.len());
        let mut requires_grad = false;
        for v in inputs {
            match v.node {
                Some(n) if v.tape == self.id => {
                    requires_grad |= self.nodes[n as usize].requires_grad;
                    ids.push(n);
                }
                _ => return Err(Error::Tape("input was not recorded on this tape")),
            }
        }
        let id = self.nodes.len() as u32;
        let rule: Option<Box<dyn Backward<T>>> = if requires_grad { Some(Box::new(rule)) } else { None };
        self.nodes.push(Node { inputs: ids, rule, param: None, requires_grad, value: value.clone() });
        Ok(Var { node: Some(id), tape: self.id, value })
    }

    pub(crate) fn record_stats(&mut self, stats: BatchStats<T>) {
        if self.recording {
            self.stats.push(stats);
        }
    }

    /// Batch statistics gathered by training-mode normalization, in
    /// execution order.
    pub fn take_batch_stats(&mut self) -> Vec<BatchStats<T>> {
        core::mem::take(&mut self.stats)
    }

    /// Gradients of a scalar (1x1) loss.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.shape() != (1, 1) {
            return Err(shape_err!("loss must be 1x1, got {:?}", loss.value.shape()));
        }
        self.backward_with(loss, Matrix::filled(1, 1, T::one()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`).
    pub fn backward_with(&self, output: &Var<T>, seed: Matrix<T>) -> Result<Gradients<T>> {
        let root = match output.node {
            Some(n) if output.tape == self.id && self.recording => n as usize,
            _ => return Err(Error::Tape("output is detached from this tape")),
        };
        if seed.shape() != output.value.shape() {
            return Err(shape_err!("seed {:?} vs output {:?}", seed.shape(), output.value.shape()));
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; root + 1];
        grads[root] = Some(seed);
        let mut needs = Vec::new();
        let mut inputs = Vec::new();
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            let Some(rule) = node.rule.as_ref() else { continue };
            let (lo, hi) = grads.split_at_mut(id);
            let Some(g) = hi[0].take() else { continue };
            needs.clear();
            needs.extend(node.inputs.iter().map(|&i| self.nodes[i as usize].requires_grad));
            inputs.clear();
            inputs.extend(node.inputs.iter().map(|&i| &*self.nodes[i as usize].value));
            let out = rule.backward(&g, &inputs, &node.value, &needs);
            debug_assert_eq!(out.len(), node.inputs.len());
            for (&i, gi) in node.inputs.iter().zip(out) {
                let Some(gi) = gi else { continue };
                debug_assert_eq!(gi.shape(), self.nodes[i as usize].value.shape());
                match &mut lo[i as usize] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(root + 1)
            .filter_map(|(i, n)| n.param.map(|p| (p, i as u32)))
            .collect();
        Ok(Gradients { tape: self.id, grads, params })
    }
}

/// Gradients of one backward pass. Only leaves keep their gradient; a leaf
/// the loss does not depend on has none (read as zero).
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Matrix<T>>>,
    params: Vec<(ParamId, u32)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Matrix<T>> {
        if v.tape != self.tape {
            return None;
        }
        v.node.and_then(|n| self.grads.get(n as usize)).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it.
    pub fn get_or_zero(&self, v: &Var<T>) -> Matrix<T> {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(v.rows(), v.cols()))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&Matrix<T>>)> + '_ {
        self.params.iter().map(|&(p, n)| (p, self.grads[n as usize].as_ref()))
    }
}
