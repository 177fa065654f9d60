//! Named parameters with Adam state.

use std::collections::BTreeMap;

use crate::error::{GradError, Result};
use crate::tape::{Grads, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Non-trainable entries (running statistics, metadata) are never
    /// touched by the optimiser.
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Step-wise decay `lr / (1 + lr_decay * t)`; zero disables it.
    pub lr_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
            lr_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(GradError::DuplicateParam(name.to_string()));
        }
        let n = value.len();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            trainable,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn by_id(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        Ok(&self.params[self.id(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        let id = self.id(name)?;
        Ok(&mut self.params[id])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.get(name)?.grad)
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Add the gradients of every parameter leaf on `tape`, in node order.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Grads) {
        for (var, id) in tape.param_leaves() {
            if let Some(g) = grads.get(var) {
                for (a, b) in self.params[id].grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    /// Add `other`'s gradients (same layout) into this store.
    pub fn add_grads_from(&mut self, other: &ParamStore) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            for (a, b) in p.grad.iter_mut().zip(&q.grad) {
                *a += b;
            }
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Effective learning rate of the next step.
    pub fn learning_rate(&self, cfg: &AdamConfig) -> f64 {
        cfg.lr / (1.0 + cfg.lr_decay * self.step as f64)
    }

    /// One Adam update with bias correction. Weight decay is added to the
    /// gradient before the moments.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        let lr = self.learning_rate(cfg);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i] + cfg.weight_decay * data[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                data[i] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }

    /// Round every value and moment to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        let r = |x: &mut f64| *x = *x as f32 as f64;
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(r);
            p.m.iter_mut().for_each(r);
            p.v.iter_mut().for_each(r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::matrix(1, values.len(), values.to_vec()).unwrap(), true)
            .unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store_with(&[0.5, -1.0, 2.0]);
        s.get_mut("w").unwrap().grad = vec![3.0, -0.01, 1e-3];
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        s.adam_step(&cfg);
        let w = s.value("w").unwrap().data();
        let expect = [0.5 - 0.01, -1.0 + 0.01, 2.0 - 0.01];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-7, "{a} {b}");
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store_with(&[0.5, -1.0]);
        let before = s.value("w").unwrap().clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..5 {
            s.adam_step(&cfg);
        }
        assert_eq!(s.value("w").unwrap(), &before);
    }

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.weight_decay, 1e-6);
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn frozen_entries_untouched() {
        let mut s = store_with(&[1.0]);
        s.insert("stat", Tensor::scalar(4.0), false).unwrap();
        s.get_mut("stat").unwrap().grad = vec![10.0];
        s.get_mut("w").unwrap().grad = vec![1.0];
        s.adam_step(&AdamConfig::default());
        assert_eq!(s.value("stat").unwrap().item(), 4.0);
        assert!(s.value("w").unwrap().item() < 1.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store_with(&[1.0]);
        assert!(s.insert("w", Tensor::scalar(0.0), true).is_err());
        assert!(s.get("missing").is_err());
    }

    #[test]
    fn lr_decay_schedule() {
        let mut s = store_with(&[1.0]);
        let cfg = AdamConfig {
            lr_decay: 0.5,
            ..Default::default()
        };
        assert_eq!(s.learning_rate(&cfg), 1e-3);
        s.adam_step(&cfg);
        assert!((s.learning_rate(&cfg) - 1e-3 / 1.5).abs() < 1e-18);
    }
}
