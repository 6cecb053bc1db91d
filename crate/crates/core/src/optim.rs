//! SGD with momentum under a cosine schedule, and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-cosine annealing from `lr0` down to zero over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr0: f64, total_steps: u64) -> Self {
        Self {
            lr0,
            total_steps: total_steps.max(1),
        }
    }

    /// `0.5 · lr0 · (1 + cos(π t / T))`, clamped to 0 past the horizon.
    pub fn lr(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        let frac = step as f64 / self.total_steps as f64;
        0.5 * self.lr0 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

pub fn cosine_lr(step: u64, schedule: &CosineSchedule) -> f64 {
    schedule.lr(step)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentumState {
    pub velocity: Tensor,
    pub momentum: f64,
    pub schedule: CosineSchedule,
}

impl SgdMomentumState {
    pub fn new(shape: crate::tensor::Shape, momentum: f64, schedule: CosineSchedule) -> Self {
        Self {
            velocity: Tensor::zeros(shape),
            momentum,
            schedule,
        }
    }

    /// `v ← μ v + g; p ← p − η(t) v`.
    pub fn step(&mut self, param: &mut Tensor, grad: &Tensor, step_index: u64) -> Result<()> {
        check_shapes("sgd_momentum_step", param, grad, &self.velocity)?;
        let lr = self.schedule.lr(step_index);
        let mu = self.momentum;
        for ((p, v), g) in param
            .data_mut()
            .iter_mut()
            .zip(self.velocity.data_mut())
            .zip(grad.data())
        {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        Ok(())
    }
}

pub fn sgd_momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut SgdMomentumState,
    step_index: u64,
) -> Result<()> {
    state.step(param, grad, step_index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(shape: crate::tensor::Shape, lr: f64) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            lr,
        }
    }

    pub fn step(&mut self, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        check_shapes("adam_step", param, grad, &self.m)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.lr);
        for (((p, m), v), g) in param
            .data_mut()
            .iter_mut()
            .zip(self.m.data_mut())
            .zip(self.v.data_mut())
            .zip(grad.data())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<()> {
    state.step(param, grad)
}

fn check_shapes(op: &'static str, param: &Tensor, grad: &Tensor, state: &Tensor) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.shape() {
        return Err(Error::shape(
            op,
            format!(
                "param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                state.shape()
            ),
        ));
    }
    Ok(())
}
