//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every operation applied
//! to inputs and parameters. [`Tape::backward`] walks the record in exact
//! reverse order and adds parameter gradients into a [`Grads`] buffer, so
//! several tapes can accumulate into the same buffer.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;

use super::lstm::{accumulate_step_grads, step_backward_pre, step_raw, LstmCache, LstmRefs};
use super::ops::{
    conv2d, conv2d_backward, dense_rows, dense_rows_backward, dropout, maxpool2d,
    maxpool2d_backward, relu, sigmoid, softmax, softmax_backward, tanh, Mode,
};
use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            tensors: store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> T {
        self.tensors
            .iter()
            .fold(T::zero(), |m, t| m.max(t.max_abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Tape handles for the twelve LSTM gate tensors, in gate order.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub input: [Var; 4],
    pub recurrent: [Var; 4],
    pub bias: [Var; 4],
}

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        row_start: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    Reshape(Var),
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Lstm(Box<LstmNode<T>>),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Sum(Var),
    WeightedSum {
        terms: Vec<Var>,
        scale: T,
    },
}

struct LstmNode<T> {
    weights: LstmVars,
    x: Var,
    extra: Option<Var>,
    state: Option<Var>,
    cache: LstmCache<T>,
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients with respect to inputs created by [`Tape::input_with_grad`].
#[derive(Debug, Clone, Default)]
pub struct InputGrads<T> {
    grads: HashMap<Var, Vec<T>>,
}

impl<T> InputGrads<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(&v).map(Vec::as_slice)
    }
}

pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn mismatch(op: &'static str, expected: &[usize], found: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, deps: &[Var]) -> Var {
        let needs_grad = deps.iter().any(|d| self.nodes[d.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is reported by [`Tape::backward`].
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records (once per tape) a reference to a stored parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn lstm_vars(
        &mut self,
        input: [ParamId; 4],
        recurrent: [ParamId; 4],
        bias: [ParamId; 4],
    ) -> LstmVars {
        LstmVars {
            input: input.map(|p| self.param(p)),
            recurrent: recurrent.map(|p| self.param(p)),
            bias: bias.map(|p| self.param(p)),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    /// Hash of every piecewise-linear branch taken so far (ReLU signs and
    /// max-pool winners). Two evaluations with equal signatures lie on the
    /// same differentiable piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.value(*x).data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var, TensorError> {
        let out = conv2d(self.value(input), self.value(kernel), self.value(bias))?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            &[input, kernel, bias],
        ))
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var, TensorError> {
        let (out, argmax) = maxpool2d(self.value(input))?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }

    /// `xᵀW + b` with `W` of shape `n×m` and `x` of length `n`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let rows = self.value(weight).shape()[0];
        if self.value(input).len() != rows {
            return Err(mismatch("dense", &[rows], self.value(input).shape()));
        }
        self.dense_rows(input, weight, 0, Some(bias))
    }

    /// Projection through the row block `W[row_start..row_start + x.len()]`.
    pub fn dense_rows(
        &mut self,
        input: Var,
        weight: Var,
        row_start: usize,
        bias: Option<Var>,
    ) -> Result<Var, TensorError> {
        let b = bias.map(|b| self.value(b).data());
        let out = dense_rows(self.value(input).data(), self.value(weight), row_start, b)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        Ok(self.push(
            Tensor::vector(out),
            Op::Dense {
                input,
                weight,
                bias,
                row_start,
            },
            &deps,
        ))
    }

    fn unary(
        &mut self,
        input: Var,
        f: fn(&[T]) -> Result<Vec<T>, TensorError>,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let out = Tensor::from_vec(x.shape(), f(x.data())?)?;
        Ok(self.push(out, op, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        self.unary(input, relu, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var, TensorError> {
        self.unary(input, sigmoid, Op::Sigmoid(input))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var, TensorError> {
        self.unary(input, tanh, Op::Tanh(input))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var, TensorError> {
        self.unary(input, softmax, Op::Softmax(input))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x.shape(), y.shape()));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// Flattened concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<T> = parts
            .iter()
            .flat_map(|&p| self.value(p).data().iter().copied())
            .collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let x = self.value(src);
        if start + len > x.len() {
            return Err(mismatch("slice", &[start + len], &[x.len()]));
        }
        let out = Tensor::vector(x.data()[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice { src, start }, &[src]))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(src).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(src), &[src]))
    }

    /// Inverted dropout; identity (no node recorded) in inference mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidRate(rate));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(input);
        }
        let x = self.value(input);
        let (out, mask) = dropout(x.data(), rate, mode, rng)?;
        let out = Tensor::from_vec(x.shape(), out)?;
        Ok(self.push(out, Op::Dropout { input, mask }, &[input]))
    }

    /// One LSTM step. `state` holds `[h; c]` (zeros when `None`); the
    /// result is the new `[h; c]`. See [`super::lstm`] for `extra`.
    pub fn lstm_step(
        &mut self,
        weights: &LstmVars,
        x: Var,
        extra: Option<Var>,
        state: Option<Var>,
    ) -> Result<Var, TensorError> {
        let m = self.value(weights.bias[0]).len();
        let rows = self.value(weights.input[0]).shape()[0];
        let xl = self.value(x).len();
        if xl > rows || (extra.is_none() && xl != rows) {
            return Err(mismatch("lstm input", &[rows], &[xl]));
        }
        let zeros = vec![T::zero(); 2 * m];
        let st = match state {
            Some(s) => self.value(s).data(),
            None => &zeros,
        };
        if st.len() != 2 * m {
            return Err(mismatch("lstm state", &[2 * m], &[st.len()]));
        }
        let refs = LstmRefs {
            input: weights.input.map(|v| self.value(v)),
            recurrent: weights.recurrent.map(|v| self.value(v)),
            bias: weights.bias.map(|v| self.value(v)),
        };
        let e = extra.map(|v| self.value(v).data());
        let (mut h, c, cache) = step_raw(refs, self.value(x).data(), e, &st[..m], &st[m..])?;
        h.extend(c);
        let mut deps = vec![x];
        deps.extend(extra);
        deps.extend(state);
        deps.extend(
            weights
                .input
                .iter()
                .chain(&weights.recurrent)
                .chain(&weights.bias),
        );
        let node = LstmNode {
            weights: *weights,
            x,
            extra,
            state,
            cache,
        };
        Ok(self.push(Tensor::vector(h), Op::Lstm(Box::new(node)), &deps))
    }

    /// `-log softmax(logits)[target]`, computed stably.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        target: usize,
    ) -> Result<Var, TensorError> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(mismatch("softmax_cross_entropy", &[target + 1], &[z.len()]));
        }
        let probs = softmax(z)?;
        let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - z[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(input), &[input])
    }

    /// `scale · Σ terms` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[Var], scale: T) -> Result<Var, TensorError> {
        let mut s = T::zero();
        for &t in terms {
            let v = self.value(t);
            if v.len() != 1 {
                return Err(mismatch("weighted_sum", &[1], v.shape()));
            }
            s += v.data()[0];
        }
        Ok(self.push(
            Tensor::scalar(s * scale),
            Op::WeightedSum {
                terms: terms.to_vec(),
                scale,
            },
            terms,
        ))
    }

    /// Back-propagates from `root` (seeded with ones), adding parameter
    /// gradients into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Grads<T>) -> Result<InputGrads<T>, TensorError> {
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(vec![T::one(); self.value(root).len()]);
        let mut inputs = InputGrads {
            grads: HashMap::new(),
        };

        let zeros = |v: Var| vec![T::zero(); self.value(v).len()];
        let take = |g: &mut Vec<Option<Vec<T>>>, v: Var| g[v.0].take().unwrap_or_else(|| zeros(v));
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let add_to = |g: &mut Vec<Option<Vec<T>>>, v: Var, f: &dyn Fn(&mut [T])| {
            if needs(v) {
                let mut buf = g[v.0].take().unwrap_or_else(|| zeros(v));
                f(&mut buf);
                g[v.0] = Some(buf);
            }
        };

        for i in (0..=root.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Input => {
                    inputs.grads.insert(Var(i), gi);
                }
                Op::Param(id) => {
                    let dst = grads.get_mut(*id).data_mut();
                    for (d, &v) in dst.iter_mut().zip(&gi) {
                        *d += v;
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                } => {
                    let mut dk = take(&mut g, *kernel);
                    let mut db = take(&mut g, *bias);
                    let mut dx = needs(*input).then(|| take(&mut g, *input));
                    conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        &gi,
                        dx.as_deref_mut(),
                        &mut dk,
                        &mut db,
                    );
                    g[kernel.0] = Some(dk);
                    g[bias.0] = Some(db);
                    if let Some(dx) = dx {
                        g[input.0] = Some(dx);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    add_to(&mut g, *input, &|d| maxpool2d_backward(argmax, &gi, d));
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                    row_start,
                } => {
                    let mut dw = take(&mut g, *weight);
                    let mut db = bias.map(|b| take(&mut g, b));
                    let mut dx = needs(*input).then(|| take(&mut g, *input));
                    dense_rows_backward(
                        self.value(*input).data(),
                        self.value(*weight),
                        *row_start,
                        &gi,
                        dx.as_deref_mut(),
                        &mut dw,
                        db.as_deref_mut(),
                    );
                    g[weight.0] = Some(dw);
                    if let (Some(b), Some(db)) = (bias, db) {
                        g[b.0] = Some(db);
                    }
                    if let Some(dx) = dx {
                        g[input.0] = Some(dx);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    add_to(&mut g, *x, &|d| {
                        for ((d, &v), &gv) in d.iter_mut().zip(xv).zip(&gi) {
                            if v > T::zero() {
                                *d += gv;
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let y = self.value(Var(i)).data();
                    add_to(&mut g, *x, &|d| {
                        for ((d, &s), &gv) in d.iter_mut().zip(y).zip(&gi) {
                            *d += gv * s * (T::one() - s);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = self.value(Var(i)).data();
                    add_to(&mut g, *x, &|d| {
                        for ((d, &t), &gv) in d.iter_mut().zip(y).zip(&gi) {
                            *d += gv * (T::one() - t * t);
                        }
                    });
                }
                Op::Softmax(x) => {
                    let dx = softmax_backward(self.value(Var(i)).data(), &gi);
                    add_to(&mut g, *x, &|d| {
                        d.iter_mut().zip(&dx).for_each(|(d, &v)| *d += v)
                    });
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        add_to(&mut g, v, &|d| {
                            d.iter_mut().zip(&gi).for_each(|(d, &v)| *d += v)
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    add_to(&mut g, *a, &|d| {
                        for ((d, &gv), &o) in d.iter_mut().zip(&gi).zip(bv) {
                            *d += gv * o;
                        }
                    });
                    add_to(&mut g, *b, &|d| {
                        for ((d, &gv), &o) in d.iter_mut().zip(&gi).zip(av) {
                            *d += gv * o;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let seg = &gi[off..off + n];
                        add_to(&mut g, p, &|d| {
                            d.iter_mut().zip(seg).for_each(|(d, &v)| *d += v)
                        });
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    let s = *start;
                    add_to(&mut g, *src, &|d| {
                        d[s..s + gi.len()]
                            .iter_mut()
                            .zip(&gi)
                            .for_each(|(d, &v)| *d += v)
                    });
                }
                Op::Reshape(src) => {
                    add_to(&mut g, *src, &|d| {
                        d.iter_mut().zip(&gi).for_each(|(d, &v)| *d += v)
                    });
                }
                Op::Dropout { input, mask } => {
                    add_to(&mut g, *input, &|d| {
                        for ((d, &gv), &m) in d.iter_mut().zip(&gi).zip(mask) {
                            *d += gv * m;
                        }
                    });
                }
                Op::Lstm(node) => self.lstm_backward(node, &gi, &mut g),
                Op::SoftmaxCrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let s = gi[0];
                    let t = *target;
                    add_to(&mut g, *logits, &|d| {
                        for (k, (d, &p)) in d.iter_mut().zip(probs).enumerate() {
                            let y = if k == t { T::one() } else { T::zero() };
                            *d += s * (p - y);
                        }
                    });
                }
                Op::Sum(x) => {
                    let s = gi[0];
                    add_to(&mut g, *x, &|d| d.iter_mut().for_each(|d| *d += s));
                }
                Op::WeightedSum { terms, scale } => {
                    let s = gi[0] * *scale;
                    for &t in terms {
                        add_to(&mut g, t, &|d| d[0] += s);
                    }
                }
            }
        }
        Ok(inputs)
    }

    fn lstm_backward(&self, node: &LstmNode<T>, gi: &[T], g: &mut [Option<Vec<T>>]) {
        let m = gi.len() / 2;
        let (d_pre, dc_prev) = step_backward_pre(&node.cache, &gi[..m], &gi[m..]);
        let w = &node.weights;
        let refs = LstmRefs {
            input: w.input.map(|v| self.value(v)),
            recurrent: w.recurrent.map(|v| self.value(v)),
            bias: w.bias.map(|v| self.value(v)),
        };
        let take = |g: &mut [Option<Vec<T>>], v: Var| {
            g[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.value(v).len()])
        };
        let mut d_in = w.input.map(|v| take(g, v));
        let mut d_rec = w.recurrent.map(|v| take(g, v));
        let mut d_b = w.bias.map(|v| take(g, v));
        let x_needs = self.nodes[node.x.0].needs_grad;
        let mut d_x = x_needs.then(|| take(g, node.x));
        let state_needs = node.state.is_some_and(|s| self.nodes[s.0].needs_grad);
        let mut d_h = vec![T::zero(); m];
        accumulate_step_grads(
            refs,
            &node.cache,
            &d_pre,
            d_in.each_mut().map(|v| v.as_mut_slice()),
            d_rec.each_mut().map(|v| v.as_mut_slice()),
            d_b.each_mut().map(|v| v.as_mut_slice()),
            d_x.as_deref_mut(),
            state_needs.then_some(&mut d_h[..]),
        );
        for (v, buf) in w.input.iter().zip(d_in) {
            g[v.0] = Some(buf);
        }
        for (v, buf) in w.recurrent.iter().zip(d_rec) {
            g[v.0] = Some(buf);
        }
        for (v, buf) in w.bias.iter().zip(d_b) {
            g[v.0] = Some(buf);
        }
        if let Some(dx) = d_x {
            g[node.x.0] = Some(dx);
        }
        if let Some(e) = node.extra.filter(|e| self.nodes[e.0].needs_grad) {
            let mut de = take(g, e);
            de.iter_mut().zip(&d_pre).for_each(|(d, &v)| *d += v);
            g[e.0] = Some(de);
        }
        if let Some(s) = node.state.filter(|_| state_needs) {
            let mut ds = take(g, s);
            for k in 0..m {
                ds[k] += d_h[k];
                ds[m + k] += dc_prev[k];
            }
            g[s.0] = Some(ds);
        }
    }
}
