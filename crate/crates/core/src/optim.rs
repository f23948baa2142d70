//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(
                "adam",
                "learning rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::arg("adam", "betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::arg("adam", "eps must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates, one vector per parameter in store order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Ok(Self {
            config,
            state: AdamState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        })
    }

    pub fn with_state<T: Scalar>(
        config: AdamConfig,
        store: &ParamStore<T>,
        state: AdamState,
    ) -> Result<Self> {
        config.validate()?;
        let fits = state.m.len() == store.len()
            && state.v.len() == store.len()
            && store
                .iter()
                .zip(state.m.iter().zip(&state.v))
                .all(|((_, _, t), (m, v))| m.len() == t.numel() && v.len() == t.numel());
        if !fits {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameters".into(),
            ));
        }
        Ok(Self { config, state })
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without a gradient keep their value and moments.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.state.m.len() != store.len() {
            return Err(Error::arg("adam", "parameter store changed size"));
        }
        self.state.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let Some(grad) = p
                .grad()
                .map(|g| g.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>())
            else {
                continue;
            };
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            for (i, (w, g)) in p.data_mut().iter_mut().zip(&grad).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                *w -= T::lit(update);
            }
            p.ensure_finite("adam")?;
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add(
                "w",
                Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 1.0]).unwrap(),
            )
            .unwrap();
        store
            .get_mut(id)
            .accumulate_grad(&Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, -0.5]).unwrap())
            .unwrap();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &store,
        )
        .unwrap();
        opt.step(&mut store).unwrap();
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - 1.1).abs() < 1e-6);
        assert!(store
            .get(id)
            .grad()
            .is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("w", Tensor::full(Shape::new(1, 1, 2, 2), 0.3))
            .unwrap();
        store
            .get_mut(id)
            .accumulate_grad(&Tensor::full(Shape::new(1, 1, 2, 2), 2.0))
            .unwrap();
        let before = store.get(id).clone();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            &store,
        )
        .unwrap();
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).data(), before.data());
    }
}
