//! Adam with coupled L2 weight decay and the single-cycle cosine learning
//! rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Optimization protocol knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_min: 0.0,
            weight_decay: 1e-5,
            batch_size: 16,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > self.lr_min && self.lr_min >= 0.0) {
            return Err(Error::config(format!(
                "learning rates must satisfy lr0 > lr_min >= 0, got lr0={} lr_min={}",
                self.lr0, self.lr_min
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config(
                "batch_size and epochs must be >= 1",
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment buffers per parameter plus the shared step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every parameter, reading the accumulated gradients.
///
/// Weight decay is coupled L2: `decay * value` is added to the gradient
/// before the moment updates. A non-finite gradient aborts with the
/// offending parameter's name.
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    lr_t: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);
    for (name, param) in params.iter_mut() {
        let n = param.value.shape().count();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let values = param.value.data_mut();
        let grads = param.grad.data();
        for i in 0..n {
            let g = grads[i];
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient in parameter `{name}` at element {i}"
                )));
            }
            let g = g + cfg.weight_decay * values[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            values[i] -= lr_t * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}

/// Single-cycle cosine schedule over `epochs`:
/// `lr_min + (lr0 - lr_min) * (1 + cos(pi * e / (epochs-1))) / 2`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    debug_assert!(epoch < cfg.epochs);
    if cfg.epochs == 1 {
        return cfg.lr0;
    }
    let progress = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn scalar_store(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::filled(Shape::new(1, 1, 1, 1), value));
        p
    }

    fn set_grad(p: &mut ParamStore, g: f64) {
        p.accumulate_grad("x", &Tensor::filled(Shape::new(1, 1, 1, 1), g))
            .unwrap();
    }

    fn no_decay() -> TrainConfig {
        TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new();
        set_grad(&mut params, 1.0);
        adam_step(&mut params, &mut state, 0.01, &no_decay()).unwrap();
        let x = params.value("x").unwrap().data()[0];
        // bias-corrected m_hat = v_hat = 1 on the first step.
        let expect = -0.01 * 1.0 / (1.0 + 1e-8);
        assert!((x - expect).abs() < 1e-15, "{x} vs {expect}");
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameter_unchanged() {
        let mut params = scalar_store(0.37);
        let mut state = AdamState::new();
        adam_step(&mut params, &mut state, 0.1, &no_decay()).unwrap();
        assert_eq!(params.value("x").unwrap().data()[0], 0.37);
    }

    #[test]
    fn five_steps_on_quadratic_match_reference_adam() {
        // Objective 0.5*x^2 from x=1; gradient is x.
        let cfg = no_decay();
        let lr = 0.1;
        let mut params = scalar_store(1.0);
        let mut state = AdamState::new();

        // Independent reference implementation, straight from the update rule.
        let (mut x_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = x_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            x_ref -= lr * m_hat / (v_hat.sqrt() + 1e-8);

            let g_cur = params.value("x").unwrap().data()[0];
            set_grad(&mut params, g_cur);
            adam_step(&mut params, &mut state, lr, &cfg).unwrap();
            params.zero_grads();
        }
        let got = params.value("x").unwrap().data()[0];
        assert!((got - x_ref).abs() < 1e-12, "{got} vs {x_ref}");
    }

    #[test]
    fn pure_weight_decay_shrinks_parameters_monotonically() {
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let mut params = scalar_store(1.0);
        let mut state = AdamState::new();
        let mut prev = 1.0f64;
        for _ in 0..20 {
            adam_step(&mut params, &mut state, 0.01, &cfg).unwrap();
            let x = params.value("x").unwrap().data()[0];
            assert!(x.abs() < prev.abs(), "{x} did not shrink from {prev}");
            assert!(x > 0.0);
            prev = x;
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new();
        set_grad(&mut params, f64::NAN);
        let err = adam_step(&mut params, &mut state, 0.1, &no_decay()).unwrap_err();
        assert!(err.to_string().contains("`x`"));
    }

    #[test]
    fn cosine_schedule_hits_both_endpoints_and_midpoint() {
        let cfg = TrainConfig {
            lr0: 1e-3,
            lr_min: 1e-5,
            epochs: 51,
            ..TrainConfig::default()
        };
        assert_eq!(cosine_lr(0, &cfg), 1e-3);
        let last = cosine_lr(50, &cfg);
        assert!((last - 1e-5).abs() < 1e-18);
        let mid = cosine_lr(25, &cfg);
        assert!((mid - (1e-3 + 1e-5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule_is_non_increasing() {
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let mut prev = f64::INFINITY;
        for e in 0..50 {
            let lr = cosine_lr(e, &cfg);
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
        assert_eq!(prev, cfg.lr_min);
    }

    #[test]
    fn single_epoch_schedule_returns_lr0() {
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert_eq!(cosine_lr(0, &cfg), cfg.lr0);
    }
}
