//! Adam optimizer with bias correction.

use super::{Tensor, TensorError};
use crate::scalar::Scalar;

pub struct AdamState<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Canonical defaults: lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            lr: T::from_f64(lr),
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            epsilon: T::from_f64(epsilon),
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Per-parameter first/second moment buffers (empty before the first
    /// step), for optimizer-state checkpointing.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn restore(&mut self, first: Vec<Vec<T>>, second: Vec<Vec<T>>, step_count: u64) {
        assert_eq!(first.len(), second.len());
        self.first_moment = first;
        self.second_moment = second;
        self.step_count = step_count;
    }
}

/// One Adam update over `params`. Gradients are left untouched; the caller
/// zeroes them between steps.
pub fn adam_step<T: Scalar>(
    params: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<(), TensorError> {
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        state.second_moment = state.first_moment.clone();
    }
    assert_eq!(state.first_moment.len(), params.len(), "optimizer state does not match parameter list");

    // Gather first so a missing grad leaves the state untouched.
    let mut grads = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        match p.grad() {
            Some(g) => grads.push(g),
            None => {
                return Err(TensorError::MissingGrad {
                    index: i,
                    name: format!("shape {:?}", p.shape()),
                })
            }
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    let one = T::one();
    for ((p, g), (m, v)) in params
        .iter()
        .zip(&grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let mut data = p.data_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (one - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (one - state.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] = data[i] - state.lr * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
