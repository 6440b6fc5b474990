use std::collections::BTreeMap;

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Named parameters with their gradients and Adam moments.
///
/// Maps are ordered by path so that iteration, serialization and updates
/// happen in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
    grads: BTreeMap<String, Matrix>,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        self.m.remove(&name);
        self.v.remove(&name);
        self.grads.remove(&name);
        self.params.insert(name, value);
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn init_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
        self.insert(name, m);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|m| m.data().len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate_grads(&mut self, grads: BTreeMap<String, Matrix>) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get(&name)
                .ok_or_else(|| Error::InvalidInput(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "accumulate_grads",
                    format!("`{name}` is {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            match self.grads.get_mut(&name) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    self.grads.insert(name, g);
                }
            }
        }
        Ok(())
    }

    /// One Adam update with bias correction and decoupled weight decay
    /// (`p ← p − lr·wd·p`). Every parameter must have a gradient.
    pub fn adam_step(&mut self, lr: f64, weight_decay: f64) -> Result<()> {
        if let Some(name) = self.params.keys().find(|k| !self.grads.contains_key(*k)) {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, p) in self.params.iter_mut() {
            let g = &self.grads[name];
            let (r, c) = p.shape();
            let m = self.m.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
            let v = self.v.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gi;
                vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= lr * weight_decay * pd[i];
                pd[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    /// Parameters only; gradients and optimizer state are dropped.
    pub fn params_only(&self) -> ParamStore {
        ParamStore {
            params: self.params.clone(),
            ..Default::default()
        }
    }
}
