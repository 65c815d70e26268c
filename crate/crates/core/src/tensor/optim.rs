//! Element-wise gradient clipping and RMSProp.

use super::tape::{Grads, ParamStore};
use super::{Real, Tensor, TensorError};

/// Clamps every gradient element into `[-limit, limit]`.
pub fn clip_gradients<T: Real>(grads: &mut Grads<T>, limit: T) {
    for t in grads.tensors_mut() {
        for v in t.data_mut() {
            *v = v.max(-limit).min(limit);
        }
    }
}

/// Per-parameter running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState<T> {
    pub acc: Vec<Tensor<T>>,
}

impl<T: Real> RmsPropState<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            acc: store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }
}

/// One RMSProp update of a single tensor:
/// `acc ← ρ·acc + (1-ρ)·g²`, `p ← p - η·g / √(acc + ε)`.
pub fn rmsprop_update<T: Real>(param: &mut [T], grad: &[T], acc: &mut [T], lr: T, rho: T, eps: T) {
    let one = T::one();
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a = rho * *a + (one - rho) * g * g;
        *p -= lr * g / (*a + eps).sqrt();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub clip: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            rho: 0.9,
            epsilon: 1e-8,
            clip: 1.0,
        }
    }
}

impl RmsProp {
    /// Clips `grads`, then applies one update to every parameter. Fails
    /// without touching the parameters if any gradient is non-finite.
    pub fn step<T: Real>(
        &self,
        params: &mut ParamStore<T>,
        grads: &mut Grads<T>,
        state: &mut RmsPropState<T>,
    ) -> Result<(), TensorError> {
        for id in params.ids() {
            if !grads.get(id).all_finite() {
                return Err(TensorError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        clip_gradients(grads, T::of(self.clip));
        let (lr, rho, eps) = (
            T::of(self.learning_rate),
            T::of(self.rho),
            T::of(self.epsilon),
        );
        for id in params.ids().collect::<Vec<_>>() {
            rmsprop_update(
                params.get_mut(id).data_mut(),
                grads.get(id).data(),
                state.acc[id.index()].data_mut(),
                lr,
                rho,
                eps,
            );
        }
        Ok(())
    }
}
