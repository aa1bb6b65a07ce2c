use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

/// Adaptive-moment optimizer over a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    cfg: AdamConfig,
    step: i32,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Self { lr, cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update from the gradients currently stored in `params`. The
    /// parameter list must be presented in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        let lr = self.lr;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let value = p.value.as_slice_mut().expect("contiguous parameter");
            let grad = p.grad.as_slice().expect("contiguous gradient");
            let m = m.as_slice_mut().expect("contiguous moment");
            let v = v.as_slice_mut().expect("contiguous moment");
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                value[i] -= lr * mh / (vh.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[3]), 1.0));
        p.grad = ArrayD::from_shape_vec(IxDyn(&[3]), vec![2.0, -0.5, 0.0]).unwrap();
        let mut opt = Adam::new(0.1, AdamConfig::default());
        opt.step(&mut [&mut p]);
        let v = p.value.as_slice().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] - 1.1).abs() < 1e-6);
        assert_eq!(v[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let mut opt = Adam::new(0.05, AdamConfig::default());
        for _ in 0..2000 {
            let g: Vec<f64> = p.value.iter().map(|x| 2.0 * (x - 1.0)).collect();
            p.grad = ArrayD::from_shape_vec(IxDyn(&[2]), g).unwrap();
            opt.step(&mut [&mut p]);
        }
        assert!(p.value.iter().all(|x| (x - 1.0).abs() < 1e-3));
    }
}
