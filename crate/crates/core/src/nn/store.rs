//! Named parameter storage with matching gradient accumulators.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub type ParamId = usize;

#[derive(Debug, Clone)]
struct ParamDef {
    name: String,
    value: Tensor,
}

/// Read-only view of parameter definitions; tapes borrow this half while the
/// gradient buffer stays independently mutable.
#[derive(Debug, Clone, Default)]
pub struct ParamValues {
    params: Vec<ParamDef>,
    index: HashMap<String, ParamId>,
}

impl ParamValues {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: ParamValues,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter under a unique name.
    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.values.index.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.values.params.len();
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.params.push(ParamDef {
            name: name.to_string(),
            value,
        });
        self.values.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Register with the default uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init.
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::from_vec(shape, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &ParamValues {
        &self.values
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        self.values.value(id)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values.params[id].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.values.name(id)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.values.find(name)
    }

    /// Split into the read-only value view plus the mutable gradient buffer,
    /// so a tape can borrow values while backward writes gradients.
    pub fn split_mut(&mut self) -> (&ParamValues, &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    /// Reset every gradient slot to exact zero.
    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = 0.0;
            }
        }
    }

    /// Inclusion mask over parameter ids whose name starts with `prefix`.
    pub fn mask_by_prefix(&self, prefix: &str) -> Vec<bool> {
        (0..self.len())
            .map(|id| self.name(id).starts_with(prefix))
            .collect()
    }

    pub fn mask_all(&self) -> Vec<bool> {
        vec![true; self.len()]
    }

    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for id in 0..self.len() {
            h ^= self.value(id).content_hash();
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0])).unwrap();
        assert!(store.add("w", Tensor::vector(vec![2.0])).is_err());
    }

    #[test]
    fn zero_grad_resets_exactly() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        store.grad_mut(id).data_mut()[0] = 3.5;
        store.zero_grad();
        assert_eq!(store.grad(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_slots_match_shapes() {
        let mut store = ParamStore::new();
        let id = store.add("m", Tensor::zeros(&[3, 4])).unwrap();
        assert_eq!(store.grad(id).shape(), &[3, 4]);
    }
}
