use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sldm::rng::{self, Rng};

use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<E> {
    names: Vec<String>,
    values: Vec<Tensor<E>>,
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Normal draws with standard deviation `std`.
    pub fn add_normal(&mut self, name: impl Into<String>, shape: Vec<usize>, std: f64, r: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| E::from_f64(std * rng::standard_normal(r))).collect();
        self.add(name, Tensor::new(shape, data))
    }

    /// Uniform draws in `±bound`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64, r: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| E::from_f64(r.random_range(-bound..=bound))).collect();
        self.add(name, Tensor::new(shape, data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.values[id.0]
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(|t| t.cast()).collect() }
    }

    /// All values concatenated in registration order.
    pub fn flatten(&self) -> Vec<E> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites all values from a flat buffer produced by [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[E]) -> Result<(), String> {
        if flat.len() != self.count() {
            return Err(format!("expected {} parameters, got {}", self.count(), flat.len()));
        }
        let mut off = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.names.iter().cloned().zip(self.values.iter().map(|t| t.shape().to_vec())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self { config, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// One bias-corrected update. `grads` is in store order.
    pub fn update(&mut self, store: &mut ParamStore<f32>, grads: &[Vec<f32>], lr: f64) {
        assert_eq!(self.m.len(), store.count(), "optimizer state does not match parameters");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let (b1, b2, eps) = (beta1 as f32, beta2 as f32, (eps * c2.sqrt()) as f32);
        let mut off = 0;
        for (t, g) in store.values.iter_mut().zip(grads) {
            assert_eq!(t.len(), g.len(), "gradient shape");
            let (m, v) = (&mut self.m[off..off + g.len()], &mut self.v[off..off + g.len()]);
            for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *p -= step * *mi / (vi.sqrt() + eps);
            }
            off += g.len();
        }
    }
}
