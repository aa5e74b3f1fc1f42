use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay coefficient.
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
}

/// Adam with decoupled weight decay and global-norm clipping.
///
/// Only elements marked as touched in the store are updated, so parameters
/// outside a sampled sub-network keep both their values and moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

/// What a single optimizer step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clip_scale: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates of `name`, if it was ever updated.
    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        Some((self.first.get(name)?.as_slice(), self.second.get(name)?.as_slice()))
    }

    /// Updates parameters in name order with learning rate `lr`, then clears
    /// all gradients. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<StepReport, OptimError> {
        let mut sq = 0.0f64;
        for (name, p) in store.iter() {
            for &g in p.grad() {
                if !g.is_finite() {
                    return Err(OptimError::NonFiniteGradient(name.to_string()));
                }
                let g = g.to_f64_lossy();
                sq += g * g;
            }
        }
        let grad_norm = sq.sqrt();
        let clip_scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let cfg = &self.config;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
        let (lr_t, eps, decay) = (T::lit(lr), T::lit(cfg.eps), T::lit(lr * cfg.weight_decay));
        let scale = T::lit(clip_scale);
        for (name, p) in store.iter_mut() {
            let n = p.value.len();
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); n]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); n]);
            let (value, grad, touched) = p.parts_mut();
            for (i, x) in value.data_mut().iter_mut().enumerate() {
                if !touched[i] {
                    continue;
                }
                let g = grad[i] * scale;
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *x = *x - decay * *x - lr_t * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(StepReport {
            grad_norm,
            clip_scale,
        })
    }

    /// Moment buffers and step counter as named tensors for checkpointing.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(
            "adam.step".to_string(),
            Tensor::scalar(T::lit(self.step as f64)),
        )];
        for (k, m) in &self.first {
            out.push((format!("adam.m.{k}"), Tensor::new([m.len()], m.clone())));
        }
        for (k, v) in &self.second {
            out.push((format!("adam.v.{k}"), Tensor::new([v.len()], v.clone())));
        }
        out
    }

    /// Inverse of [`Adam::state_tensors`]; entries with other prefixes are ignored.
    pub fn from_state<'a>(
        config: AdamConfig,
        entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    ) -> Self {
        let mut opt = Self::new(config);
        for (name, t) in entries {
            if name == "adam.step" {
                opt.step = t.item().to_f64_lossy() as u64;
            } else if let Some(k) = name.strip_prefix("adam.m.") {
                opt.first.insert(k.to_string(), t.data().to_vec());
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                opt.second.insert(k.to_string(), t.data().to_vec());
            }
        }
        opt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = values.len();
        s.insert(name, Tensor::new([n], values));
        s
    }

    fn set_grad(store: &mut ParamStore<f64>, name: &str, g: &[f64]) {
        store.accumulate(name, &[0..g.len()], g);
    }

    #[test]
    fn two_steps_follow_the_adam_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        };
        let mut store = store_with("w", vec![1.0]);
        let mut opt = Adam::new(cfg);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in [0.5f64, -0.2].into_iter().enumerate() {
            set_grad(&mut store, "w", &[g]);
            opt.step(&mut store, 0.1).unwrap();
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            p -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
        }
        assert!((store.get("w").item() - p).abs() < 1e-15);
        let (mm, vv) = opt.moments("w").unwrap();
        assert!((mm[0] - m).abs() < 1e-15 && (vv[0] - v).abs() < 1e-18);
        // first step moves by lr * 0.5 / (0.5 + eps)
        assert!((p - 0.865_44).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_only_applies_decay() {
        let cfg = AdamConfig {
            weight_decay: 0.01,
            ..AdamConfig::default()
        };
        let mut store = store_with("w", vec![2.0, -4.0]);
        set_grad(&mut store, "w", &[0.0, 0.0]);
        Adam::new(cfg).step(&mut store, 0.5).unwrap();
        assert_eq!(store.get("w").data(), &[2.0 - 0.5 * 0.01 * 2.0, -4.0 + 0.5 * 0.01 * 4.0]);
    }

    #[test]
    fn clipping_scales_to_the_ceiling() {
        let cfg = AdamConfig {
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        };
        let mut store = store_with("w", vec![0.0, 0.0]);
        set_grad(&mut store, "w", &[6.0, 8.0]);
        let mut opt = Adam::new(cfg);
        let report = opt.step(&mut store, 1e-3).unwrap();
        assert_eq!(report.grad_norm, 10.0);
        assert!((report.clip_scale - 0.1).abs() < 1e-15);
        let (m, _) = opt.moments("w").unwrap();
        assert!((m[0] - 0.1 * 0.6).abs() < 1e-15 && (m[1] - 0.1 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn untouched_elements_are_left_alone() {
        let mut store = store_with("w", vec![1.0, 1.0, 1.0]);
        store.accumulate("w", &[1..2], &[0.3]);
        Adam::new(AdamConfig::default()).step(&mut store, 0.1).unwrap();
        let d = store.get("w").data();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[2], 1.0);
        assert!(d[1] < 1.0);
    }

    #[test]
    fn nan_gradient_aborts_and_names_parameter() {
        let mut store = store_with("enc.w", vec![1.0]);
        set_grad(&mut store, "enc.w", &[f64::NAN]);
        let err = Adam::new(AdamConfig::default()).step(&mut store, 0.1).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient("enc.w".into()));
        assert_eq!(store.get("enc.w").item(), 1.0);
    }

    #[test]
    fn grads_are_cleared_after_step() {
        let mut store = store_with("w", vec![1.0]);
        set_grad(&mut store, "w", &[1.0]);
        Adam::new(AdamConfig::default()).step(&mut store, 0.1).unwrap();
        assert_eq!(store.param("w").grad(), &[0.0]);
        assert_eq!(store.param("w").touched(), &[false]);
    }
}
