//! Adam with an inverse-square-root warmup schedule.

use crate::error::{Error, Result};
use crate::model::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup: usize,
}

impl Schedule {
    /// Linear warmup to `peak_lr`, then `peak_lr * sqrt(warmup / step)`. Steps start at 1.
    pub fn lr(&self, step: usize) -> f64 {
        let t = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.peak_lr * (t / w).min((w / t).sqrt())
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(shapes: &[usize]) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn update(&mut self, params: &mut [Vec<f32>], grads: &[Vec<f32>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<T: Real>(grads: &[Vec<T>]) -> f64 {
    grads.iter().flatten().map(|g| g.to_f64().unwrap().powi(2)).sum::<f64>().sqrt()
}
