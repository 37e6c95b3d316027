use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelParams, ParamId, ParamKind};
use crate::tape::{Tape, Var};
use crate::{Matrix, Result, Scalar};

/// Whether normalization uses batch statistics or the running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    Train,
    Eval,
}

/// Everything a layer forward needs.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ModelParams<T>,
    pub mode: NormMode,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ModelParams<T>, mode: NormMode) -> Self {
        Self { tape, params, mode }
    }

    pub fn param(&mut self, id: ParamId) -> Var<T> {
        self.tape.param(self.params, id)
    }
}

/// Weight initialization: uniform in `±1/sqrt(fan_in)`. Values are drawn in
/// `f64` so `f32` and `f64` models built from the same seed agree.
pub fn uniform_init<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Matrix<T> {
    let bound = 1.0 / num_traits::Float::sqrt(fan_in.max(1) as f64);
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// How a weight tensor starts out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    FanIn,
    Zeros,
}

/// `x w + b` with `w: d_in x d_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearLayer {
    pub fn register<T: Scalar, R: Rng>(
        params: &mut ModelParams<T>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let value = match init {
            Init::FanIn => uniform_init(rng, d_in, d_out, d_in),
            Init::Zeros => Matrix::zeros(d_in, d_out),
        };
        let w = params.register(format!("{name}.weight"), &[d_in, d_out], ParamKind::Weight, value)?;
        let b = if bias {
            Some(params.register(format!("{name}.bias"), &[d_out], ParamKind::Weight, Matrix::zeros(1, d_out))?)
        } else {
            None
        };
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(self.w);
        let b = self.b.map(|b| ctx.param(b));
        ctx.tape.linear(x, &w, b.as_ref())
    }
}

/// Per-channel batch normalization with learned scale/shift and running
/// statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormLayer {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl NormLayer {
    pub fn register<T: Scalar>(params: &mut ModelParams<T>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            scale: params.register(format!("{name}.scale"), &[d], ParamKind::Weight, Matrix::filled(1, d, T::one()))?,
            shift: params.register(format!("{name}.shift"), &[d], ParamKind::Weight, Matrix::zeros(1, d))?,
            running_mean: params.register(format!("{name}.running_mean"), &[d], ParamKind::Buffer, Matrix::zeros(1, d))?,
            running_var: params.register(format!("{name}.running_var"), &[d], ParamKind::Buffer, Matrix::filled(1, d, T::one()))?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let scale = ctx.param(self.scale);
        let shift = ctx.param(self.shift);
        match ctx.mode {
            NormMode::Train => ctx.tape.batch_norm(x, &scale, &shift, Some((self.running_mean, self.running_var))),
            NormMode::Eval => {
                let mean = ctx.params.get(self.running_mean).value().clone();
                let var = ctx.params.get(self.running_var).value().clone();
                ctx.tape.norm_eval(x, &scale, &shift, mean.as_slice(), var.as_slice())
            }
        }
    }
}

/// Linear, normalization, ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjLayer {
    pub linear: LinearLayer,
    pub norm: NormLayer,
}

impl ProjLayer {
    pub fn register<T: Scalar, R: Rng>(
        params: &mut ModelParams<T>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            linear: LinearLayer::register(params, rng, name, d_in, d_out, true, Init::FanIn)?,
            norm: NormLayer::register(params, &format!("{name}.norm"), d_out)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.linear.forward(ctx, x)?;
        let h = self.norm.forward(ctx, &h)?;
        ctx.tape.relu(&h)
    }
}

/// Sparse convolution weight (`volume*d_in x d_out`, no bias) followed by
/// normalization and ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub w: ParamId,
    pub norm: NormLayer,
    pub volume: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar, R: Rng>(
        params: &mut ModelParams<T>,
        rng: &mut R,
        name: &str,
        volume: usize,
        d_in: usize,
        d_out: usize,
        init: Init,
    ) -> Result<Self> {
        let value = match init {
            Init::FanIn => uniform_init(rng, volume * d_in, d_out, volume * d_in),
            Init::Zeros => Matrix::zeros(volume * d_in, d_out),
        };
        let w = params.register(format!("{name}.weight"), &[volume, d_in, d_out], ParamKind::Weight, value)?;
        let norm = NormLayer::register(params, &format!("{name}.norm"), d_out)?;
        Ok(Self { w, norm, volume, d_in, d_out })
    }

    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: &Var<T>,
        map: &alloc::sync::Arc<crate::sparse::KernelMap>,
    ) -> Result<Var<T>> {
        let w = ctx.param(self.w);
        let h = ctx.tape.sparse_conv(x, &w, map)?;
        let h = self.norm.forward(ctx, &h)?;
        ctx.tape.relu(&h)
    }
}
