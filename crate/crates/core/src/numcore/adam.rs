use super::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// A named parameter buffer together with its accumulated gradient.
pub struct ParamSlot<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Adam with bias correction and decoupled weight decay.
///
/// Moment buffers are allocated on the first step and must keep the same
/// shapes afterwards.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [ParamSlot<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.value.len() != p.grad.len() {
                return Err(Error::dims("adam_step", &[p.value.len()], &[p.grad.len()]));
            }
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}[{i}]", p.name)));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self
                .first_moment
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.value.len())
        {
            let tracked: Vec<usize> = self.first_moment.iter().map(Vec::len).collect();
            let given: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
            return Err(Error::dims("adam_step moments", &tracked, &given));
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let w = p.value[i] * decay;
                p.value[i] = w - lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

impl Mlp {
    /// Parameter slots named `{prefix}.{layer}.weight` / `{prefix}.{layer}.bias`.
    pub fn param_slots(&mut self, prefix: &str) -> Vec<ParamSlot<'_>> {
        let mut slots = Vec::with_capacity(self.layers().len() * 2);
        for (k, layer) in self.layers_mut().iter_mut().enumerate() {
            let [(w, gw), (b, gb)] = layer.params_and_grads();
            slots.push(ParamSlot {
                name: format!("{prefix}.{k}.weight"),
                value: w,
                grad: gw,
            });
            slots.push(ParamSlot {
                name: format!("{prefix}.{k}.bias"),
                value: b,
                grad: gb,
            });
        }
        slots
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot<'a>(value: &'a mut [f64], grad: &'a [f64]) -> ParamSlot<'a> {
        ParamSlot {
            name: "p".into(),
            value,
            grad,
        }
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params_unchanged() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = vec![0.5, -2.0];
        adam.step(&mut [slot(&mut p, &[0.0, 0.0])]).unwrap();
        assert_eq!(p, vec![0.5, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction => delta = lr / (1 + eps)
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = vec![1.0];
        adam.step(&mut [slot(&mut p, &[1.0])]).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((1.0 - p[0] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn pure_decay_scales_params() {
        let mut adam = AdamState::new(AdamConfig {
            weight_decay: 0.01,
            ..AdamConfig::default()
        });
        let mut p = vec![3.0, -4.0];
        adam.step(&mut [slot(&mut p, &[0.0, 0.0])]).unwrap();
        let s = 1.0 - 0.001 * 0.01;
        assert_eq!(p, vec![3.0 * s, -4.0 * s]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        let mut q = vec![0.0];
        let err = adam
            .step(&mut [
                slot(&mut p, &[0.0, 0.0]),
                ParamSlot {
                    name: "decoder.2.bias".into(),
                    value: &mut q,
                    grad: &[f64::NAN],
                },
            ])
            .unwrap_err();
        assert!(err.to_string().contains("decoder.2.bias[0]"), "{err}");
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn moment_shapes_are_fixed_after_first_step() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        adam.step(&mut [slot(&mut p, &[1.0, 1.0])]).unwrap();
        let mut r = vec![0.0; 3];
        assert!(adam.step(&mut [slot(&mut r, &[1.0; 3])]).is_err());
    }
}
