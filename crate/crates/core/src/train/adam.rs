use std::collections::BTreeMap;

use crate::autodiff::Tensor;

/// Adam with the conventional defaults; bias-corrected moments start at
/// zero, so a zero gradient leaves parameters untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, tensor) in params.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; tensor.numel()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; tensor.numel()]);
            for i in 0..tensor.numel() {
                let g = grad.values[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_with(values: Vec<f64>) -> BTreeMap<String, Tensor> {
        let mut p = BTreeMap::new();
        p.insert(
            "w".to_string(),
            Tensor::from_values(&[values.len()], values).unwrap(),
        );
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = params_with(vec![1.0, -2.0, 3.0]);
        let grads = params_with(vec![0.0, 0.0, 0.0]);
        let mut opt = Adam::new(0.1);
        for _ in 0..5 {
            opt.step(&mut params, &grads);
        }
        assert_eq!(params["w"].values, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // With bias correction the first update is lr * g/|g| (up to eps).
        let mut params = params_with(vec![0.0]);
        let grads = params_with(vec![0.5]);
        let mut opt = Adam::new(0.01);
        opt.step(&mut params, &grads);
        assert!((params["w"].values[0] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut params = params_with(vec![3.0]);
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            let x = params["w"].values[0];
            let grads = params_with(vec![2.0 * x]);
            opt.step(&mut params, &grads);
        }
        assert!(params["w"].values[0].abs() < 0.05);
    }
}
