use serde::{Deserialize, Serialize};

use super::layer::Param;
use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub config: AdamConfig,
    pub step_count: u64,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamConfig) -> Result<Self, NnError> {
        let c = config;
        let valid = c.learning_rate >= 0.0
            && c.learning_rate.is_finite()
            && c.beta1 > 0.0
            && c.beta1 < 1.0
            && c.beta2 > 0.0
            && c.beta2 < 1.0
            && c.epsilon > 0.0;
        if !valid {
            return Err(NnError::InvalidArgument(format!(
                "invalid Adam configuration {config:?}"
            )));
        }
        Ok(Self {
            config,
            step_count: 0,
            moments: Vec::new(),
        })
    }

    /// First and second moment for each parameter, in parameter order.
    pub fn moments(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.moments
    }

    /// Applies one update to every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<(), NnError> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    (
                        Tensor::zeros(p.value.shape()),
                        Tensor::zeros(p.value.shape()),
                    )
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(NnError::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for (p, (m, _)) in params.iter().zip(&self.moments) {
            if p.grad.shape() != p.value.shape() || m.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch {
                    context: "adam parameter",
                    expected: m.shape().to_vec(),
                    actual: p.grad.shape().to_vec(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr, eps) = (T::lit(c.learning_rate), T::lit(c.epsilon));
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for (((w, &g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
