use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters. `weight_decay` is decoupled and scaled by the
/// learning rate: each step also shrinks `w` by `lr * weight_decay * w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            weight_decay: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct AdamState<T> {
    pub config: AdamConfig,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
    /// Number of updates applied.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            t: 0,
        }
    }
}

/// One Adam update over every parameter; consumes (zeroes) the gradients.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::MissingGradient(name.to_string()));
    }
    state.t += 1;
    let c = &state.config;
    let t = state.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.value.shape()));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.value.shape()));
        let w = p.value.data_mut();
        for (i, wi_slot) in w.iter_mut().enumerate() {
            let g = grad.data()[i].f64();
            let mi = c.beta1 * m.data()[i].f64() + (1.0 - c.beta1) * g;
            let vi = c.beta2 * v.data()[i].f64() + (1.0 - c.beta2) * g * g;
            m.data_mut()[i] = T::of(mi);
            v.data_mut()[i] = T::of(vi);
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            let wi = wi_slot.f64();
            let update = c.learning_rate * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * wi);
            *wi_slot = T::of(wi - update);
        }
    }
    params.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new(0);
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(AdamConfig::default().learning_rate, 1e-3);
        assert_eq!(AdamConfig::default().weight_decay, 0.9);
    }

    #[test]
    fn zero_gradient_leaves_weight_unchanged() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        s.iter_mut().next().unwrap().1.grad = Some(Tensor::scalar(0.0));
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.get("w").unwrap().data()[0], 1.0);
        assert_eq!(st.t, 1);
        assert!(s.iter().all(|(_, p)| p.grad.is_none()));
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(AdamConfig::default());
        assert!(matches!(adam_step(&mut s, &mut st), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn constant_gradient_update_approaches_learning_rate() {
        // Closed form: with constant g the bias-corrected moments are g and g^2,
        // so every update is lr * g / (|g| + eps) -> lr in magnitude.
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut s = scalar_store(0.0);
        let mut st = AdamState::new(cfg.clone());
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = s.get("w").unwrap().data()[0];
            s.iter_mut().next().unwrap().1.grad = Some(Tensor::scalar(0.37));
            adam_step(&mut s, &mut st).unwrap();
            last = (s.get("w").unwrap().data()[0] - before).abs();
        }
        assert!((last - cfg.learning_rate).abs() / cfg.learning_rate < 1e-3);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_by_lr_times_decay() {
        let mut s = scalar_store(2.0);
        let mut st = AdamState::new(AdamConfig::default());
        s.iter_mut().next().unwrap().1.grad = Some(Tensor::scalar(0.0));
        adam_step(&mut s, &mut st).unwrap();
        let expected = 2.0 - 1e-3 * 0.9 * 2.0;
        assert!((s.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
    }
}
