//! Adam with cosine-annealed learning rate.

use super::layers::ParamSet;
use super::tensor::Tensor;
use crate::error::{Result, TrinityError};

/// Cosine annealing from `base` down to `min` over `total_steps`.
#[derive(Clone, Debug)]
pub struct CosineSchedule {
    pub base: f64,
    pub min: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(base: f64, min: f64, total_steps: usize) -> Self {
        CosineSchedule { base, min, total_steps }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 || step >= self.total_steps {
            return self.min;
        }
        let t = step as f64 / self.total_steps as f64;
        self.min + 0.5 * (self.base - self.min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

pub struct Adam {
    params: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: CosineSchedule,
}

impl Adam {
    pub fn new(params: &ParamSet, schedule: CosineSchedule) -> Self {
        let tensors = params.tensors();
        let m = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        let v = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            params: tensors,
            m,
            v,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.clear_grad();
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step_count)
    }

    pub fn steps_taken(&self) -> usize {
        self.step_count
    }

    /// One Adam update with bias correction. Parameters the last backward
    /// pass did not reach are treated as zero-gradient; a step with no
    /// fresh gradients at all is a stale-gradient error.
    pub fn step(&mut self) -> Result<()> {
        let grads: Vec<Option<Vec<f64>>> = self.params.iter().map(|p| p.grad_opt()).collect();
        if grads.iter().all(|g| g.is_none()) {
            return Err(TrinityError::StaleGradient);
        }
        let lr = self.schedule.lr(self.step_count);
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.apply_update(|data| {
                for j in 0..data.len() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
                }
            });
            p.clear_grad();
        }
        // Clear the rest too so the next step demands a fresh backward.
        for p in &self.params {
            p.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::ParamSet;

    #[test]
    fn schedule_starts_at_base_and_ends_at_min() {
        let s = CosineSchedule::new(2e-4, 1e-6, 100);
        assert!((s.lr(0) - 2e-4).abs() < 1e-18);
        assert!((s.lr(100) - 1e-6).abs() < 1e-18);
        assert!((s.lr(10_000) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_monotone_non_increasing() {
        let s = CosineSchedule::new(1e-3, 1e-5, 57);
        let mut prev = f64::INFINITY;
        for step in 0..=60 {
            let lr = s.lr(step);
            assert!(lr <= prev + 1e-18, "lr rose at step {step}");
            prev = lr;
        }
    }

    #[test]
    fn quadratic_converges_within_200_steps() {
        // f(x) = (x - 3)^2 has its minimum at x = 3.
        let x = Tensor::param(vec![0.0], &[1]).unwrap();
        let mut ps = ParamSet::new();
        ps.register("x", &x);
        let mut adam = Adam::new(&ps, CosineSchedule::new(0.1, 0.01, 200));
        for _ in 0..200 {
            adam.zero_grad();
            let diff = x.add_scalar(-3.0);
            let loss = diff.mul(&diff).unwrap().sum_all();
            loss.backward().unwrap();
            adam.step().unwrap();
        }
        assert!((x.value()[0] - 3.0).abs() < 1e-2, "x = {}", x.value()[0]);
    }

    #[test]
    fn step_without_backward_is_stale() {
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let mut ps = ParamSet::new();
        ps.register("x", &x);
        let mut adam = Adam::new(&ps, CosineSchedule::new(0.1, 0.0, 10));
        assert!(matches!(adam.step(), Err(TrinityError::StaleGradient)));
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        adam.step().unwrap();
        // Gradients were consumed; an immediate second step is stale again.
        assert!(matches!(adam.step(), Err(TrinityError::StaleGradient)));
    }
}
