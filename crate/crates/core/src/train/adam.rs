use serde::{Deserialize, Serialize};

use crate::model::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one slot per parameter array in store
/// order.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParameterStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update. `grads[i]` is `None` for arrays the loss did not
    /// reach, which is treated as a zero gradient.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &[Option<Vec<f64>>]) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (k, ((_, t), g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..t.len() {
                let gi = g.as_ref().map_or(0.0, |g| g[i]);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let update = c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                t.data_mut()[i] -= update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(vals: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::from_vec(vals.to_vec()));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0]);
        let mut opt = Adam::new(AdamConfig::new(0.1), &s);
        for _ in 0..5 {
            opt.step(&mut s, &[Some(vec![0.0, 0.0])]);
            opt.step(&mut s, &[None]);
        }
        assert_eq!(s, store(&[1.0, -2.0]));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // after bias correction m̂ = g and v̂ = g², so the step is lr·g/(|g|+ε)
        let mut s = store(&[0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig::new(0.01), &s);
        opt.step(&mut s, &[Some(vec![3.0, -0.5])]);
        let d = s.get("w").unwrap().data();
        assert!((d[0] + 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((d[1] - 0.01 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = store(&[5.0]);
        let mut opt = Adam::new(AdamConfig::new(0.1), &s);
        for _ in 0..2000 {
            let w = s.get("w").unwrap().data()[0];
            opt.step(&mut s, &[Some(vec![2.0 * (w - 1.5)])]);
        }
        assert!((s.get("w").unwrap().data()[0] - 1.5).abs() < 1e-3);
    }
}
