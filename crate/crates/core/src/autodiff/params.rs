use std::collections::BTreeMap;

use crate::error::{DalError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
    trainable: bool,
}

/// Hyper-parameters of the Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameters with their gradients and Adam moment estimates.
///
/// Insertion order is preserved; lookups go through a name index.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.insert_with(name, value, true)
    }

    /// Registers a parameter that is read by the tape but never updated.
    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.insert_with(name, value, false)
    }

    fn insert_with(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(DalError::invalid(format!("duplicate parameter `{name}`")));
        }
        let shape = value.shape().to_vec();
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros(&shape),
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            value,
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

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub(crate) fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub(crate) fn value_at(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub(crate) fn is_trainable(&self, idx: usize) -> bool {
        self.params[idx].trainable
    }

    pub fn trainable(&self, name: &str) -> Option<bool> {
        self.index_of(name).map(|i| self.params[i].trainable)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.params[i].value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].grad)
    }

    /// Replaces a parameter's value, keeping the shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| DalError::invalid(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[idx];
        if p.value.shape() != value.shape() {
            return Err(DalError::Shape(format!(
                "set `{name}`: stored {:?} vs new {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, g: &Tensor) {
        self.params[idx].grad.axpy(1.0, g);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every trainable parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let g = p.grad.data();
            let m = p.first_moment.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// Parameter values only, in insertion order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> Result<()> {
        for (name, value) in snapshot {
            self.set(name, value.clone())?;
        }
        Ok(())
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
