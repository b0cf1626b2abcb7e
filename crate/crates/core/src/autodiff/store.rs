use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::{AutodiffError, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
struct Parameter {
    value: Tensor,
    m: Vec<f32>,
    v: Vec<f32>,
    grad: Option<Vec<f32>>,
    step: u64,
}

/// Ordered map of named trainable tensors with their Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        if self.params.contains_key(name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        let n = value.numel();
        self.params.insert(name.to_string(), Parameter { value, m: vec![0.0; n], v: vec![0.0; n], grad: None, step: 0 });
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, AutodiffError> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        let p = self.params.get_mut(name).ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch { op: "set_value", lhs: p.value.shape().to_vec(), rhs: value.shape().to_vec() });
        }
        p.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&[f32]> {
        self.params.get(name).and_then(|p| p.grad.as_deref())
    }

    pub fn step_count(&self, name: &str) -> Option<u64> {
        self.params.get(name).map(|p| p.step)
    }

    /// Sets every gradient to zero.
    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(vec![0.0; p.value.numel()]);
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds the gradients of every parameter bound on `tape` into the store.
    /// Parameters the loss did not reach receive zeros.
    pub fn accumulate(&mut self, tape: &Tape) -> Result<(), AutodiffError> {
        for (name, var) in tape.bindings() {
            let p = self.params.get_mut(name).ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?;
            let dst = p.grad.get_or_insert_with(|| vec![0.0; p.value.numel()]);
            if let Some(g) = tape.grad(*var) {
                dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f32 {
        let sq: f64 = self
            .params
            .values()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&v| f64::from(v) * f64::from(v))
            .sum();
        sq.sqrt() as f32
    }

    /// Rescales all gradients so their global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f32) -> f32 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.params.values_mut().filter_map(|p| p.grad.as_mut()) {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    /// One bias-corrected Adam update of every parameter; clears gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), AutodiffError> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(AutodiffError::MissingGradient(name.clone()));
        }
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let data = p.value.data_mut();
            for i in 0..data.len() {
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = p.m[i] / bc1;
                let vh = p.v[i] / bc2;
                data[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and value bytes, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_step(store: &mut ParameterStore, coeffs: &[f32]) -> Vec<f32> {
        // f(x) = Σ c_i x_i², gradient 2 c_i x_i
        let mut tape = Tape::new();
        let x = tape.param(store, "x").unwrap();
        let c = tape.constant(Tensor::new(&[coeffs.len()], coeffs.to_vec()).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let w = tape.mul(sq, c).unwrap();
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        store.accumulate(&tape).unwrap();
        store.grad("x").unwrap().to_vec()
    }

    #[test]
    fn one_step_descends() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
        quad_step(&mut store, &[1.0]);
        store.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
        let x = store.value("x").unwrap().item();
        assert!(x < 1.0);
        assert!(store.grad("x").is_none());
    }

    #[test]
    fn zero_gradient_keeps_value_and_counts_step() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::full(&[3], 0.7)).unwrap();
        store.zero_grads();
        store.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(store.value("w").unwrap().data(), &[0.7; 3]);
        assert_eq!(store.step_count("w"), Some(1));
    }

    #[test]
    fn missing_gradient() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::zeros(&[2])).unwrap();
        assert_eq!(store.adam_step(&AdamConfig::default()), Err(AutodiffError::MissingGradient("w".into())));
    }

    #[test]
    fn convex_quadratic_converges() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::new(&[2], vec![1.5, -2.0]).unwrap()).unwrap();
        let coeffs = [1.0, 4.0];
        let mut g = Vec::new();
        for _ in 0..500 {
            g = quad_step(&mut store, &coeffs);
            store.adam_step(&AdamConfig::with_lr(0.05)).unwrap();
        }
        let norm = g.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
    }

    #[test]
    fn duplicate_and_unknown() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(store.insert("a", Tensor::zeros(&[1])).is_err());
        assert!(store.value("b").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::zeros(&[4])).unwrap();
        let h0 = store.content_hash();
        assert_eq!(h0, store.clone().content_hash());
        store.set_value("a", Tensor::full(&[4], 1.0)).unwrap();
        assert_ne!(h0, store.content_hash());
    }
}
