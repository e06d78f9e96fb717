//! Bias-corrected Adam over lists of parameter tensors.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, flattened across all tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    /// One update. `params` and `grads` must list tensors of matching
    /// lengths whose sizes add up to the state's parameter count.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], cfg: &AdamConfig) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - libm::pow(cfg.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, self.step as f64);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            debug_assert_eq!(p.len(), g.len());
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
            }
            offset += p.len();
        }
        debug_assert_eq!(offset, self.m.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_and_decay_moments() {
        let mut p = vec![1.0, -2.0];
        let mut fresh = AdamState::new(2);
        fresh.step(&mut [&mut p], &[&[0.0, 0.0]], &AdamConfig::default());
        assert_eq!(p, [1.0, -2.0]);
        assert_eq!(fresh.m, [0.0, 0.0]);

        let mut state = AdamState::new(2);
        state.m = vec![0.5, -0.5];
        state.v = vec![0.25, 0.25];
        let before = state.clone();
        let mut q = vec![0.0, 0.0];
        state.step(&mut [&mut q], &[&[0.0, 0.0]], &AdamConfig::default());
        assert!(state.m.iter().zip(&before.m).all(|(a, b)| a.abs() < b.abs()));
        assert!(state.v.iter().zip(&before.v).all(|(a, b)| a < b));
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut p = vec![0.0, 0.0];
        let mut state = AdamState::new(2);
        let mut last = p.clone();
        for _ in 0..5000 {
            last.copy_from_slice(&p);
            state.step(&mut [&mut p], &[&[3.0, -0.2]], &cfg);
        }
        let step = [p[0] - last[0], p[1] - last[1]];
        assert!((step[0] + 0.01).abs() < 1e-6, "{step:?}");
        assert!((step[1] - 0.01).abs() < 1e-6, "{step:?}");
    }

    #[test]
    fn zero_lr_is_identity() {
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        let mut a = vec![0.3];
        let mut b = vec![-1.0, 2.0];
        let mut state = AdamState::new(3);
        state.step(&mut [&mut a, &mut b], &[&[1.0], &[5.0, -5.0]], &cfg);
        assert_eq!((a[0], b[0], b[1]), (0.3, -1.0, 2.0));
        assert_eq!(state.step, 1);
    }
}
