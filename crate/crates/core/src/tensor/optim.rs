use serde::{Deserialize, Serialize};

use super::{Result, Scalar, Tensor, TensorError};

/// Stochastic gradient descent settings. `batch_size` counts images per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err("momentum must be in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// Momentum SGD: `v ← μ·v − lr·g; θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar = f32> {
    config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Applies one update and clears every gradient. `lr_scale` multiplies
    /// the configured learning rate (for warmup/decay schedules).
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], lr_scale: f64) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(TensorError::State(format!("parameter {i} has no gradient")));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(TensorError::State(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = T::cast(self.config.learning_rate * lr_scale);
        let mu = T::cast(self.config.momentum);
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let grad = p.take_grad().expect("checked above");
            if v.len() != grad.len() {
                return Err(TensorError::State("parameter shape changed".into()));
            }
            for ((x, vi), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = mu * *vi - lr * g;
                *x = *x + *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, momentum: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum,
            iterations: 1,
            batch_size: 1,
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Tensor::<f32>::new(&[2], vec![1.0, -2.0]).unwrap();
        p.set_grad(vec![0.0, 0.0]).unwrap();
        Sgd::new(cfg(0.1, 0.9)).step(&mut [&mut p], 1.0).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert!(p.grad().is_none());
    }

    #[test]
    fn plain_step() {
        let mut p = Tensor::<f32>::new(&[1], vec![1.0]).unwrap();
        p.set_grad(vec![0.5]).unwrap();
        Sgd::new(cfg(0.1, 0.0)).step(&mut [&mut p], 1.0).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn momentum_unrolls() {
        let mut p = Tensor::<f64>::new(&[1], vec![0.0]).unwrap();
        let mut opt = Sgd::new(cfg(0.1, 0.9));
        p.set_grad(vec![1.0]).unwrap();
        opt.step(&mut [&mut p], 1.0).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-12);
        p.set_grad(vec![1.0]).unwrap();
        opt.step(&mut [&mut p], 1.0).unwrap();
        assert!((p.data()[0] + 0.29).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut p = Tensor::<f32>::zeros(&[1]);
        let err = Sgd::new(cfg(0.1, 0.0)).step(&mut [&mut p], 1.0);
        assert!(matches!(err, Err(TensorError::State(_))));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.1, 0.5).validate().is_ok());
        assert!(cfg(0.0, 0.5).validate().is_err());
        assert!(cfg(0.1, 1.0).validate().is_err());
    }
}
