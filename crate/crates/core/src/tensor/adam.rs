use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates and step count, one slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update. Parameters with a `None` gradient are
    /// skipped (their moments are left as they are).
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<Vec<T>>],
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(shape_err("adam_step", "parameter/gradient/state count mismatch"));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let c1 = T::from_f64(1.0 - libm::pow(cfg.beta1, t as f64));
        let c2 = T::from_f64(1.0 - libm::pow(cfg.beta2, t as f64));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(cfg.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.len() != p.len() {
                return Err(shape_err("adam_step", "state length"));
            }
            let Some(g) = &grads[i] else { continue };
            if g.len() != p.len() {
                return Err(shape_err("adam_step", "gradient length"));
            }
            for ((pv, &gv), (mj, vj)) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut())) {
                *mj = b1 * *mj + (T::one() - b1) * gv;
                *vj = b2 * *vj + (T::one() - b2) * gv * gv;
                *pv -= lr * (*mj / c1) / ((*vj / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
