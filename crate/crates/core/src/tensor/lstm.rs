//! LSTM cell with a forget gate:
//!
//! ```text
//! i = sigmoid(x W_ix + h W_iy + b_i)
//! f = sigmoid(x W_fx + h W_fy + b_f)
//! o = sigmoid(x W_ox + h W_oy + b_o)
//! c' = f * c + i * tanh(x W_cx + h W_cy + b_c)
//! h' = o * tanh(c')
//! ```

use super::ops::{dense_rows, dense_rows_backward, sigmoid_scalar};
use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    /// Letter used in parameter names (`w_ix`, `b_f`, ...).
    pub fn letter(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Output => 'o',
            Gate::Cell => 'c',
        }
    }
}

/// Gate matrices indexed by [`Gate`] order. Input weights are `n×m`,
/// recurrent weights `m×m`, biases `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights<T> {
    pub input: [Tensor<T>; 4],
    pub recurrent: [Tensor<T>; 4],
    pub bias: [Tensor<T>; 4],
}

impl<T: Real> LstmWeights<T> {
    pub fn zeros(inputs: usize, cells: usize) -> Self {
        Self {
            input: std::array::from_fn(|_| Tensor::zeros(&[inputs, cells])),
            recurrent: std::array::from_fn(|_| Tensor::zeros(&[cells, cells])),
            bias: std::array::from_fn(|_| Tensor::zeros(&[cells])),
        }
    }

    pub fn cells(&self) -> usize {
        self.bias[0].len()
    }

    pub(crate) fn refs(&self) -> LstmRefs<'_, T> {
        LstmRefs {
            input: std::array::from_fn(|g| &self.input[g]),
            recurrent: std::array::from_fn(|g| &self.recurrent[g]),
            bias: std::array::from_fn(|g| &self.bias[g]),
        }
    }
}

/// Borrowed view of the twelve gate tensors.
#[derive(Clone, Copy)]
pub(crate) struct LstmRefs<'a, T> {
    pub input: [&'a Tensor<T>; 4],
    pub recurrent: [&'a Tensor<T>; 4],
    pub bias: [&'a Tensor<T>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(cells: usize) -> Self {
        Self {
            h: vec![T::zero(); cells],
            c: vec![T::zero(); cells],
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache<T> {
    pub(crate) x: Vec<T>,
    pub(crate) h_prev: Vec<T>,
    pub(crate) c_prev: Vec<T>,
    /// Activated gates: i, f, o and the tanh candidate.
    pub(crate) gates: [Vec<T>; 4],
    pub(crate) tanh_c: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads<T> {
    pub input: [Vec<T>; 4],
    pub recurrent: [Vec<T>; 4],
    pub bias: [Vec<T>; 4],
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
}

/// Forward step. `extra`, when given, holds precomputed pre-activation
/// contributions for the four gates (concatenated in [`Gate`] order); the
/// input weights are then only read for their first `x.len()` rows.
pub(crate) fn step_raw<T: Real>(
    w: LstmRefs<'_, T>,
    x: &[T],
    extra: Option<&[T]>,
    h_prev: &[T],
    c_prev: &[T],
) -> Result<(Vec<T>, Vec<T>, LstmCache<T>), TensorError> {
    let m = w.bias[0].len();
    if h_prev.len() != m || c_prev.len() != m || extra.is_some_and(|e| e.len() != 4 * m) {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_step",
            expected: vec![m],
            found: vec![h_prev.len(), c_prev.len()],
        });
    }
    for g in 0..4 {
        w.recurrent[g].expect_shape("lstm recurrent weight", &[m, m])?;
    }
    let mut gates: [Vec<T>; 4] = Default::default();
    for g in 0..4 {
        let mut pre = dense_rows(x, w.input[g], 0, Some(w.bias[g].data()))?;
        let rec = dense_rows(h_prev, w.recurrent[g], 0, None)?;
        for (p, r) in pre.iter_mut().zip(rec) {
            *p += r;
        }
        if let Some(e) = extra {
            for (p, &v) in pre.iter_mut().zip(&e[g * m..(g + 1) * m]) {
                *p += v;
            }
        }
        if g == 3 {
            pre.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            pre.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        }
        gates[g] = pre;
    }
    let [i, f, o, cand] = &gates;
    let c: Vec<T> = (0..m).map(|k| f[k] * c_prev[k] + i[k] * cand[k]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<T> = (0..m).map(|k| o[k] * tanh_c[k]).collect();
    let cache = LstmCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Pre-activation gradients (concatenated in [`Gate`] order) and `dc_prev`.
pub(crate) fn step_backward_pre<T: Real>(
    cache: &LstmCache<T>,
    dh: &[T],
    dc: &[T],
) -> (Vec<T>, Vec<T>) {
    let m = cache.tanh_c.len();
    let [i, f, o, cand] = &cache.gates;
    let mut d_pre = vec![T::zero(); 4 * m];
    let mut dc_prev = vec![T::zero(); m];
    let one = T::one();
    for k in 0..m {
        let tc = cache.tanh_c[k];
        let dct = dc[k] + dh[k] * o[k] * (one - tc * tc);
        d_pre[k] = dct * cand[k] * i[k] * (one - i[k]);
        d_pre[m + k] = dct * cache.c_prev[k] * f[k] * (one - f[k]);
        d_pre[2 * m + k] = dh[k] * tc * o[k] * (one - o[k]);
        d_pre[3 * m + k] = dct * i[k] * (one - cand[k] * cand[k]);
        dc_prev[k] = dct * f[k];
    }
    (d_pre, dc_prev)
}

/// Propagates pre-activation gradients into weight, input and state
/// gradient buffers (all accumulated).
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_step_grads<T: Real>(
    w: LstmRefs<'_, T>,
    cache: &LstmCache<T>,
    d_pre: &[T],
    d_input: [&mut [T]; 4],
    d_recurrent: [&mut [T]; 4],
    d_bias: [&mut [T]; 4],
    mut d_x: Option<&mut [T]>,
    mut d_h_prev: Option<&mut [T]>,
) {
    let m = cache.tanh_c.len();
    for (g, ((dwi, dwr), db)) in d_input.into_iter().zip(d_recurrent).zip(d_bias).enumerate() {
        let gp = &d_pre[g * m..(g + 1) * m];
        dense_rows_backward(
            &cache.x,
            w.input[g],
            0,
            gp,
            d_x.as_deref_mut(),
            dwi,
            Some(db),
        );
        dense_rows_backward(
            &cache.h_prev,
            w.recurrent[g],
            0,
            gp,
            d_h_prev.as_deref_mut(),
            dwr,
            None,
        );
    }
}

/// One LSTM step from `(h_prev, c_prev)`.
pub fn lstm_step<T: Real>(
    x: &[T],
    state: &LstmState<T>,
    weights: &LstmWeights<T>,
) -> Result<(LstmState<T>, LstmCache<T>), TensorError> {
    let n = weights.input[0].shape()[0];
    if x.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_step",
            expected: vec![n],
            found: vec![x.len()],
        });
    }
    let (h, c, cache) = step_raw(weights.refs(), x, None, &state.h, &state.c)?;
    Ok((LstmState { h, c }, cache))
}

/// Backward through one step given gradients w.r.t. `h_t` and `c_t`.
pub fn lstm_step_backward<T: Real>(
    cache: &LstmCache<T>,
    weights: &LstmWeights<T>,
    dh: &[T],
    dc: &[T],
) -> LstmGrads<T> {
    let (d_pre, dc_prev) = step_backward_pre(cache, dh, dc);
    let mut g = LstmGrads {
        input: std::array::from_fn(|k| vec![T::zero(); weights.input[k].len()]),
        recurrent: std::array::from_fn(|k| vec![T::zero(); weights.recurrent[k].len()]),
        bias: std::array::from_fn(|k| vec![T::zero(); weights.bias[k].len()]),
        x: vec![T::zero(); cache.x.len()],
        h_prev: vec![T::zero(); cache.h_prev.len()],
        c_prev: dc_prev,
    };
    let [a0, a1, a2, a3] = &mut g.input;
    let [r0, r1, r2, r3] = &mut g.recurrent;
    let [b0, b1, b2, b3] = &mut g.bias;
    accumulate_step_grads(
        weights.refs(),
        cache,
        &d_pre,
        [a0, a1, a2, a3],
        [r0, r1, r2, r3],
        [b0, b1, b2, b3],
        Some(&mut g.x),
        Some(&mut g.h_prev),
    );
    g
}
