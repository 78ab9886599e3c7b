//! Trainable parameters and the Adam update.

use super::mat::Mat;
use super::rng::Rng;
use crate::error::{MladError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A trainable matrix with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Mat,
    pub grad: Mat,
    adam_m: Mat,
    adam_v: Mat,
    step_count: u64,
}

impl Param {
    pub fn new(value: Mat) -> Self {
        let (r, c) = (value.rows(), value.cols());
        Param {
            value,
            grad: Mat::zeros(r, c),
            adam_m: Mat::zeros(r, c),
            adam_v: Mat::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Mat::zeros(rows, cols))
    }

    /// Uniform Kaiming-style fan-in initialization: U(-b, b), b = sqrt(6/fan_in).
    pub fn kaiming_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.uniform_in(-bound, bound);
        }
        Param::new(m)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Bias-corrected Adam update with decoupled weight decay.
    pub fn adam_step(&mut self, lr: f64, weight_decay: f64) -> Result<()> {
        self.grad.check_finite("adam_step gradient")?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let n = self.value.data().len();
        for i in 0..n {
            let g = self.grad.data()[i];
            let m = &mut self.adam_m.data_mut()[i];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            let m_hat = *m / bc1;
            let v = &mut self.adam_v.data_mut()[i];
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let v_hat = *v / bc2;
            let x = &mut self.value.data_mut()[i];
            *x -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *x);
        }
        Ok(())
    }
}

/// Zero the gradients of a parameter list.
pub fn zero_grads(params: &mut [&mut Param]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}

/// Adam step over a parameter list, then reset the gradients.
pub fn adam_step_all(params: &mut [&mut Param], lr: f64, weight_decay: f64) -> Result<()> {
    for p in params.iter_mut() {
        p.adam_step(lr, weight_decay)?;
        p.zero_grad();
    }
    Ok(())
}

/// Guard used by the training loops: abort on a non-finite loss.
pub fn ensure_finite_loss(loss: f64, ctx: &str) -> Result<f64> {
    if !loss.is_finite() {
        return Err(MladError::numerical(format!("non-finite loss in {ctx}: {loss}")));
    }
    Ok(loss)
}
