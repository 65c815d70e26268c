//! Layer kernels with explicit backward passes. Images are `H×W×C`,
//! convolution kernels `3×3×Cin×Cout`, dense weights `n×m` (`out = xᵀW + b`).

use rand::Rng;

use super::{Real, Tensor, TensorError};

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize), TensorError> {
    let &[h, w, cin] = input.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![0, 0, 0],
            found: input.shape().to_vec(),
        });
    };
    let cout = kernel.shape().last().copied().unwrap_or(0);
    kernel.expect_shape("conv2d kernel", &[3, 3, cin, cout])?;
    bias.expect_shape("conv2d bias", &[cout])?;
    if h == 0 || w == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![1, 1, cin],
            found: input.shape().to_vec(),
        });
    }
    Ok((h, w, cin, cout))
}

/// 3×3 convolution, stride 1, zero "same" padding.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (h, w, cin, cout) = conv_dims(input, kernel, bias)?;
    let (x, k) = (input.data(), kernel.data());
    let mut out = Tensor::zeros(&[h, w, cout]);
    let o = out.data_mut();
    for y in 0..h {
        for xx in 0..w {
            let acc = &mut o[(y * w + xx) * cout..][..cout];
            acc.copy_from_slice(bias.data());
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < w) else {
                        continue;
                    };
                    let px = &x[(iy * w + ix) * cin..][..cin];
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v != T::zero() {
                            axpy(v, &k[kbase + ci * cout..][..cout], acc);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Accumulates convolution gradients. `d_input` may be omitted when the
/// input is not differentiated (e.g. raw pixels).
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &[T],
    d_input: Option<&mut [T]>,
    d_kernel: &mut [T],
    d_bias: &mut [T],
) {
    let &[h, w, cin] = input.shape() else {
        unreachable!("checked in forward")
    };
    let cout = kernel.shape()[3];
    let (x, k) = (input.data(), kernel.data());
    let mut d_input = d_input;
    for y in 0..h {
        for xx in 0..w {
            let g = &grad_out[(y * w + xx) * cout..][..cout];
            for (db, &gv) in d_bias.iter_mut().zip(g) {
                *db += gv;
            }
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < w) else {
                        continue;
                    };
                    let pbase = (iy * w + ix) * cin;
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for ci in 0..cin {
                        let v = x[pbase + ci];
                        let krow = kbase + ci * cout;
                        if v != T::zero() {
                            axpy(v, g, &mut d_kernel[krow..krow + cout]);
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            di[pbase + ci] += dot(&k[krow..krow + cout], g);
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max-pooling with stride 2. Returns the pooled tensor and, per
/// output element, the flat input index that won (first on ties).
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let &[h, w, c] = input.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool2d",
            expected: vec![0, 0, 0],
            found: input.shape().to_vec(),
        });
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddSpatialExtent {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Tensor::zeros(&[oh, ow, c]);
    let mut argmax = vec![0usize; oh * ow * c];
    let o = out.data_mut();
    for y in 0..oh {
        for xx in 0..ow {
            for ch in 0..c {
                let mut best_i = ((2 * y) * w + 2 * xx) * c + ch;
                let mut best = x[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * w + 2 * xx + dx) * c + ch;
                    if x[i] > best {
                        best = x[i];
                        best_i = i;
                    }
                }
                let oi = (y * ow + xx) * c + ch;
                o[oi] = best;
                argmax[oi] = best_i;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<T: Real>(argmax: &[usize], grad_out: &[T], d_input: &mut [T]) {
    for (&i, &g) in argmax.iter().zip(grad_out) {
        d_input[i] += g;
    }
}

/// `out = xᵀ W[row_start..row_start+n] + b` where `n = x.len()`.
pub(crate) fn dense_rows<T: Real>(
    x: &[T],
    weight: &Tensor<T>,
    row_start: usize,
    bias: Option<&[T]>,
) -> Result<Vec<T>, TensorError> {
    let &[rows, m] = weight.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            expected: vec![x.len(), 0],
            found: weight.shape().to_vec(),
        });
    };
    if row_start + x.len() > rows || bias.is_some_and(|b| b.len() != m) {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            expected: vec![row_start + x.len(), m],
            found: weight.shape().to_vec(),
        });
    }
    let mut out = match bias {
        Some(b) => b.to_vec(),
        None => vec![T::zero(); m],
    };
    let wd = weight.data();
    for (i, &v) in x.iter().enumerate() {
        if v != T::zero() {
            axpy(v, &wd[(row_start + i) * m..][..m], &mut out);
        }
    }
    Ok(out)
}

pub(crate) fn dense_rows_backward<T: Real>(
    x: &[T],
    weight: &Tensor<T>,
    row_start: usize,
    grad_out: &[T],
    d_x: Option<&mut [T]>,
    d_weight: &mut [T],
    d_bias: Option<&mut [T]>,
) {
    let m = weight.shape()[1];
    let wd = weight.data();
    if let Some(db) = d_bias {
        for (b, &g) in db.iter_mut().zip(grad_out) {
            *b += g;
        }
    }
    for (i, &v) in x.iter().enumerate() {
        let row = (row_start + i) * m;
        if v != T::zero() {
            axpy(v, grad_out, &mut d_weight[row..row + m]);
        }
    }
    if let Some(dx) = d_x {
        for (i, d) in dx.iter_mut().enumerate() {
            *d += dot(&wd[(row_start + i) * m..][..m], grad_out);
        }
    }
}

/// Fully connected layer, `out = xᵀW + b`.
pub fn dense<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let n = input.len();
    let m = bias.len();
    weight.expect_shape("dense weight", &[n, m])?;
    Ok(Tensor::vector(dense_rows(
        input.data(),
        weight,
        0,
        Some(bias.data()),
    )?))
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); input.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); grad_out.len()];
    dense_rows_backward(
        input.data(),
        weight,
        0,
        grad_out,
        Some(&mut dx),
        &mut dw,
        Some(&mut db),
    );
    (dx, dw, db)
}

fn check_finite<T: Real>(op: &'static str, x: &[T]) -> Result<(), TensorError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFiniteInput(op))
    }
}

pub fn relu<T: Real>(x: &[T]) -> Result<Vec<T>, TensorError> {
    check_finite("relu", x)?;
    Ok(x.iter().map(|&v| v.max(T::zero())).collect())
}

/// Gradient through relu given its input.
pub fn relu_backward<T: Real>(x: &[T], grad: &[T]) -> Vec<T> {
    x.iter()
        .zip(grad)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn sigmoid<T: Real>(x: &[T]) -> Result<Vec<T>, TensorError> {
    check_finite("sigmoid", x)?;
    Ok(x.iter().map(|&v| sigmoid_scalar(v)).collect())
}

/// Gradient through sigmoid given its output.
pub fn sigmoid_backward<T: Real>(y: &[T], grad: &[T]) -> Vec<T> {
    y.iter()
        .zip(grad)
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect()
}

pub fn tanh<T: Real>(x: &[T]) -> Result<Vec<T>, TensorError> {
    check_finite("tanh", x)?;
    Ok(x.iter().map(|v| v.tanh()).collect())
}

/// Gradient through tanh given its output.
pub fn tanh_backward<T: Real>(y: &[T], grad: &[T]) -> Vec<T> {
    y.iter()
        .zip(grad)
        .map(|(&t, &g)| g * (T::one() - t * t))
        .collect()
}

pub fn softmax<T: Real>(x: &[T]) -> Result<Vec<T>, TensorError> {
    check_finite("softmax", x)?;
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Gradient through softmax given its output.
pub fn softmax_backward<T: Real>(y: &[T], grad: &[T]) -> Vec<T> {
    let s = dot(y, grad);
    y.iter().zip(grad).map(|(&p, &g)| p * (g - s)).collect()
}

/// Inverted dropout. Returns the output and the multiplicative mask
/// (0 or `1/(1-rate)`); in inference mode the mask is all ones.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &[T],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidRate(rate));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.to_vec(), vec![T::one(); x.len()]));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = x
        .iter()
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let out = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((out, mask))
}
