//! Adam with standard bias correction.
//!
//! Moment buffers are kept in f64 no matter the parameter precision;
//! with the pipeline's 1e-5 base learning rate the update magnitudes
//! sit near the bottom of f32 resolution, and f64 moments keep the
//! optimizer exact there.

use crate::error::{Error, Result};
use crate::kernel::Scalar;
use crate::tensor::Param;

#[derive(Debug, Clone, Copy)]
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

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub t: u64,
    slots: Vec<Slot>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update over the full parameter list. The list must be in the
    /// same order and with the same shapes on every call; moment slots
    /// are allocated lazily on the first one.
    pub fn step<S: Scalar>(
        &mut self,
        params: &mut [&mut Param<S>],
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "state has {} slots, got {} parameters",
                    self.slots.len(),
                    params.len()
                ),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (p, slot) in params.iter_mut().zip(&mut self.slots) {
            if p.len() != slot.m.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("slot len {} vs param len {}", slot.m.len(), p.len()),
                });
            }
            let grads = p.grad.data();
            let vals = p.value.data();
            let mut next = Vec::with_capacity(vals.len());
            for i in 0..vals.len() {
                let g = grads[i].to_f64();
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                let theta = vals[i].to_f64() - lr * mhat / (vhat.sqrt() + cfg.eps);
                next.push(S::from_f64(theta));
            }
            p.value.data_mut().copy_from_slice(&next);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(vals: &[f64]) -> Param<f64> {
        Param::new(Tensor::new(vec![vals.len()], vals.to_vec()).unwrap())
    }

    #[test]
    fn zero_gradient_is_a_noop() {
        let mut p = param(&[1.0, -2.0, 3.5]);
        let mut st = AdamState::new();
        let cfg = AdamConfig::default();
        for _ in 0..5 {
            st.step(&mut [&mut p], 1e-3, &cfg).unwrap();
        }
        assert_eq!(p.value.data(), &[1.0, -2.0, 3.5]);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut p = param(&[0.0]);
        p.grad.data_mut()[0] = 1.0;
        let mut st = AdamState::new();
        st.step(&mut [&mut p], 1e-3, &AdamConfig::default()).unwrap();
        // mhat = vhat = 1 on step one, so the update is -lr / (1 + eps).
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut p = param(&[0.5, -0.5]);
            let mut st = AdamState::new();
            let cfg = AdamConfig::default();
            for k in 0..50 {
                p.grad.data_mut()[0] = (k as f64 * 0.1).sin();
                p.grad.data_mut()[1] = (k as f64 * 0.2).cos();
                st.step(&mut [&mut p], 1e-2, &cfg).unwrap();
            }
            p.value.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_drift_rejected() {
        let mut a = param(&[0.0]);
        let mut b = param(&[0.0, 0.0]);
        let mut st = AdamState::new();
        let cfg = AdamConfig::default();
        st.step(&mut [&mut a], 1e-3, &cfg).unwrap();
        assert!(st.step(&mut [&mut b], 1e-3, &cfg).is_err());
    }
}
