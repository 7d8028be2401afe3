use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    /// Multiplier on the Adadelta update.
    pub lr: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
            lr: 0.0005,
        }
    }
}

/// Running averages `E[g²]` and `E[Δ²]`, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    pub sq_grad: Vec<Tensor>,
    pub sq_update: Vec<Tensor>,
}

impl AdadeltaState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdadeltaConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        AdadeltaState {
            config,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }

    /// ```text
    /// E[g²] ← ρ E[g²] + (1-ρ) g²
    /// Δ     = -sqrt(E[Δ²] + ε) / sqrt(E[g²] + ε) · g
    /// E[Δ²] ← ρ E[Δ²] + (1-ρ) Δ²
    /// θ     ← θ + lr · Δ
    /// ```
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<(), TrainError> {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        assert_eq!(
            params.len(),
            self.sq_grad.len(),
            "state built for these parameters"
        );
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(TrainError::Shape {
                    name: names.get(i).cloned().unwrap_or_default(),
                });
            }
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient {
                    name: names.get(i).cloned().unwrap_or_default(),
                });
            }
        }
        let AdadeltaConfig { rho, epsilon, lr } = self.config;
        for (((p, g), eg), ed) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.sq_grad)
            .zip(&mut self.sq_update)
        {
            for (((theta, &g), eg), ed) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(eg.data_mut())
                .zip(ed.data_mut())
            {
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let delta = -((*ed + epsilon).sqrt() / (*eg + epsilon).sqrt()) * g;
                *ed = rho * *ed + (1.0 - rho) * delta * delta;
                *theta += lr * delta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut p = Tensor::vector(vec![0.5, -0.25]);
        let mut st = AdadeltaState::new([&p], AdadeltaConfig::default());
        let before = st.clone();
        st.step(&mut [&mut p], &[Tensor::zeros(&[2])], &names(1))
            .unwrap();
        assert_eq!(p.data(), &[0.5, -0.25]);
        assert_eq!(st, before);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let cfg = AdadeltaConfig::default();
        let g = 0.3;
        let mut p = Tensor::vector(vec![1.0]);
        let mut st = AdadeltaState::new([&p], cfg);
        st.step(&mut [&mut p], &[Tensor::vector(vec![g])], &names(1))
            .unwrap();

        // Closed form with zero initial state.
        let delta = -(cfg.epsilon.sqrt() / ((1.0 - cfg.rho) * g * g + cfg.epsilon).sqrt()) * g;
        let expected = 1.0 + cfg.lr * delta;
        assert!((p.data()[0] - expected).abs() < 1e-15);
        // delta = -(1e-3 / sqrt(0.0045 + 1e-6)) * 0.3 = -0.0044716...
        assert!((delta + 0.004_471_638_2).abs() < 1e-9);
        assert!((st.sq_grad[0].data()[0] - 0.05 * 0.09).abs() < 1e-15);
        assert!(st.sq_update[0].data()[0] >= 0.0);
    }

    #[test]
    fn equal_inputs_give_equal_updates() {
        let mut a = Tensor::vector(vec![0.1]);
        let mut b = Tensor::vector(vec![0.1]);
        let mut st = AdadeltaState::new(
            [&a, &b],
            AdadeltaConfig {
                lr: 1.0,
                ..Default::default()
            },
        );
        let g = Tensor::vector(vec![-0.7]);
        for _ in 0..3 {
            st.step(&mut [&mut a, &mut b], &[g.clone(), g.clone()], &names(2))
                .unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::vector(vec![0.0]);
        let mut st = AdadeltaState::new([&p], AdadeltaConfig::default());
        let err = st
            .step(
                &mut [&mut p],
                &[Tensor::vector(vec![f64::NAN])],
                &["layer3.gate.bias".into()],
            )
            .unwrap_err();
        assert!(err.to_string().contains("layer3.gate.bias"));
        assert_eq!(p.data(), &[0.0]);
    }
}
