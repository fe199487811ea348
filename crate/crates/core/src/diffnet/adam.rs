//! Bias-corrected adaptive moment optimizer.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// A named parameter tensor and its gradient, flattened.
pub struct ParamTensor<'a> {
    pub name: &'a str,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update to every tensor. Nothing is modified when any
    /// gradient is non-finite or any shape disagrees with earlier calls.
    pub fn step(&mut self, tensors: &mut [ParamTensor<'_>]) -> Result<()> {
        for t in tensors.iter() {
            if t.values.len() != t.grad.len() {
                return Err(Error::Dimension(format!(
                    "{}: {} parameters but {} gradient entries",
                    t.name,
                    t.values.len(),
                    t.grad.len()
                )));
            }
            if let Some(i) = t.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} (entry {i})", t.name)));
            }
        }
        if self.first.is_empty() {
            self.first = tensors.iter().map(|t| vec![0.0; t.values.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != tensors.len()
            || self.first.iter().zip(tensors.iter()).any(|(m, t)| m.len() != t.values.len())
        {
            return Err(Error::Dimension("parameter shapes changed between optimizer steps".into()));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in tensors.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..t.values.len() {
                let g = t.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                t.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step1(opt: &mut OptimizerState, p: &mut [f64], g: &[f64]) -> Result<()> {
        opt.step(&mut [ParamTensor {
            name: "p",
            values: p,
            grad: g,
        }])
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut opt = OptimizerState::new(AdamConfig::default());
        let mut p = [1.5, -2.0];
        step1(&mut opt, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.5, -2.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = OptimizerState::new(AdamConfig::with_learning_rate(0.01));
        let mut p = [0.0, 0.0];
        step1(&mut opt, &mut p, &[3.0, -0.2]).unwrap();
        // m̂ = g and v̂ = g², so the step is lr · g / (|g| + ε)
        assert!((p[0] + 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - 0.01 * 0.2 / (0.2 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut opt = OptimizerState::new(AdamConfig::with_learning_rate(1e-2));
        let mut p = [1.0];
        for _ in 0..500 {
            let g = [2.0 * p[0]];
            step1(&mut opt, &mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut opt = OptimizerState::new(AdamConfig::default());
        let mut a = [0.0];
        let mut b = [0.0];
        let err = opt
            .step(&mut [
                ParamTensor {
                    name: "layer0.weight",
                    values: &mut a,
                    grad: &[1.0],
                },
                ParamTensor {
                    name: "layer0.bias",
                    values: &mut b,
                    grad: &[f64::NAN],
                },
            ])
            .unwrap_err();
        assert!(err.to_string().contains("layer0.bias"));
        assert_eq!(a, [0.0]);
        assert_eq!(opt.step_count(), 0);
    }
}
