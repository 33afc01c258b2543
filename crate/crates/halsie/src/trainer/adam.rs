//! ADAM with bias correction.

use crate::autodiff::Scalar;
use crate::model::ParamStore;

/// First/second moment estimates, one pair of buffers per store entry.
pub struct AdamState<T> {
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        AdamState {
            step: 0,
            m: store
                .entries()
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect(),
            v: store
                .entries()
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected update over every learnable parameter, from the
/// gradients currently held in the store.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_c(beta1);
    let b2 = T::from_f64_c(beta2);
    let one = T::one();
    let corr1 = T::from_f64_c(1.0 - beta1.powi(t));
    let corr2 = T::from_f64_c(1.0 - beta2.powi(t));
    let lr = T::from_f64_c(lr);
    let eps = T::from_f64_c(eps);

    for (idx, p) in store.entries_mut().iter_mut().enumerate() {
        if !p.kind.learnable() {
            continue;
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
