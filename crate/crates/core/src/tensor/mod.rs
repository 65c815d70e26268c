//! Dense real tensors, layer kernels, a reverse-mode tape, and the optimizer.

mod gradcheck;
mod lstm;
mod ops;
mod optim;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, NumCast};
use thiserror::Error;

pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, GradCheckReport, DEFAULT_STEP,
};
pub use lstm::{lstm_step, lstm_step_backward, Gate, LstmCache, LstmGrads, LstmState, LstmWeights};
pub use ops::{
    conv2d, conv2d_backward, dense, dense_backward, dropout, maxpool2d, maxpool2d_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, tanh, tanh_backward, Mode,
};
pub use optim::{clip_gradients, rmsprop_update, RmsProp, RmsPropState};
pub use tape::{Grads, InputGrads, LstmVars, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("max-pool needs even spatial extents, found {height}x{width}")]
    OddSpatialExtent { height: usize, width: usize },
    #[error("{0}: non-finite input")]
    NonFiniteInput(&'static str),
    #[error("dropout rate {0} is outside [0, 1)")]
    InvalidRate(f64),
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// Floating-point element type: `f64` for gradient checks, `f32` for training.
pub trait Real:
    Float
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub(crate) fn expect_shape(
        &self,
        op: &'static str,
        shape: &[usize],
    ) -> Result<(), TensorError> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                expected: shape.to_vec(),
                found: self.shape.clone(),
            })
        }
    }
}
