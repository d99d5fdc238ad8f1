use std::borrow::{Borrow, BorrowMut};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Borrow<Tensor<T>>>(params: &[P]) -> Self {
        Self {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.borrow().shape()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.borrow().shape()))
                .collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Real, P: BorrowMut<Tensor<T>>>(
    params: &mut [P],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let p = p.borrow();
        if p.shape() != g.shape()
            || p.shape() != state.m[i].shape()
            || p.shape() != state.v[i].shape()
        {
            return Err(Error::Shape(format!(
                "adam slot {i}: param {:?}, grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let c1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(cfg.eps));
    let one = T::one();
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .borrow_mut()
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv * c1;
            let v_hat = *vv * c2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
