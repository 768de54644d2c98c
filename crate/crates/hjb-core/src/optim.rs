//! First-order parameter update rules (SGD and Adam).

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptKind {
    /// Adam with the de-facto defaults β1 = 0.9, β2 = 0.999, eps = 1e-8.
    pub fn adam_default() -> Self {
        OptKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-network optimizer state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptKind,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptKind, lr: f64, param_len: usize) -> Self {
        let moments = match kind {
            OptKind::Sgd => 0,
            OptKind::Adam { .. } => param_len,
        };
        Optimizer { kind, lr, m: vec![0.0; moments], v: vec![0.0; moments], step_count: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// One update in the negative-gradient direction. A non-finite gradient
    /// entry aborts with its index before any parameter is touched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_with_lr(params, grads, self.lr)
    }

    /// Same update rule at an explicit rate (used by the warm-up phase).
    pub fn step_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape { ctx: "optimizer step", expected: params.len(), got: grads.len() });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at index {i}: {}", grads[i])));
        }
        self.step_count += 1;
        match self.kind {
            OptKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptKind::Adam { beta1, beta2, eps } => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_one_step() {
        let mut opt = Optimizer::new(OptKind::Sgd, 0.01, 1);
        let mut p = [1.0];
        opt.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn sgd_is_linear_in_lr_and_grad() {
        for &(lr, g) in &[(0.1, 3.0), (0.02, -1.5), (1.0, 0.25)] {
            let mut opt = Optimizer::new(OptKind::Sgd, lr, 1);
            let mut p = [0.7];
            opt.step(&mut p, &[g]).unwrap();
            assert_eq!(p[0], 0.7 - lr * g);
        }
    }

    /// Hand-evaluated bias-corrected Adam update at t = 1:
    /// m̂ = g, v̂ = g², Δ = lr·g/(|g| + eps).
    #[test]
    fn adam_first_step_hand_value() {
        let mut opt = Optimizer::new(OptKind::adam_default(), 0.01, 1);
        let mut p = [0.0];
        opt.step(&mut p, &[2.0]).unwrap();
        let expect = -0.01 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15, "got {} want {expect}", p[0]);
        assert!((p[0] - (-0.00999999995)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut sgd = Optimizer::new(OptKind::Sgd, 0.5, 2);
        let mut p = [1.0, -2.0];
        sgd.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        let mut adam = Optimizer::new(OptKind::adam_default(), 0.5, 2);
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
    }

    /// At step 1 Adam's update depends on g only through its sign (up to eps).
    #[test]
    fn adam_scale_invariance_at_step_one() {
        let delta = |g: f64| {
            let mut opt = Optimizer::new(OptKind::adam_default(), 0.01, 1);
            let mut p = [0.0];
            opt.step(&mut p, &[g]).unwrap();
            p[0]
        };
        let base = delta(2.0);
        for &c in &[10.0, 0.1] {
            assert!((delta(2.0 * c) - base).abs() < 1e-9, "c = {c}");
        }
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut opt = Optimizer::new(OptKind::Sgd, 0.1, 3);
        let mut p = [0.0, 0.0, 0.0];
        let err = opt.step(&mut p, &[1.0, f64::NAN, 1.0]).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("index 1"), "{msg}"),
            other => panic!("wrong error: {other}"),
        }
        assert_eq!(p, [0.0, 0.0, 0.0], "params untouched on error");
    }
}
