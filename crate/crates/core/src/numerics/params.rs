use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`]. Ids follow lexicographic name order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors with gradient accumulators of identical dims.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new(params: BTreeMap<String, Tensor>) -> Self {
        let mut names = Vec::with_capacity(params.len());
        let mut values = Vec::with_capacity(params.len());
        let mut grads = Vec::with_capacity(params.len());
        for (name, value) in params {
            grads.push(Tensor::zeros(value.dims()));
            names.push(name);
            values.push(value);
        }
        Self {
            names,
            values,
            grads,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .map(ParamId)
            .map_err(|_| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.id(name).is_ok()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(self.value(self.id(name)?))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        if value.dims() != self.values[id.0].dims() {
            return Err(Error::shape("ParamStore::set", self.values[id.0].dims(), value.dims()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// `grad += scale · incoming` for every parameter that received a gradient.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (acc, incoming) in self.grads.iter_mut().zip(&grads.by_param) {
            if let Some(g) = incoming {
                for (a, v) in acc.data_mut().iter_mut().zip(g) {
                    *a += scale * v;
                }
            }
        }
    }

    /// SHA-256 over names, dims and little-endian values, in id order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            hasher.update(name.as_bytes());
            for d in value.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) by_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            by_param: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn add(&mut self, id: ParamId, grad: &[f64]) {
        match &mut self.by_param[id.0] {
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            }
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut m = BTreeMap::new();
        m.insert("b".to_string(), Tensor::full(&[2], 1.0));
        m.insert("a".to_string(), Tensor::full(&[3], 2.0));
        ParamStore::new(m)
    }

    #[test]
    fn ids_are_lexicographic() {
        let s = store();
        assert_eq!(s.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(s.id("a").unwrap().index(), 0);
        assert!(matches!(s.id("c"), Err(Error::UnknownParam(_))));
    }

    #[test]
    fn grads_match_dims_and_accumulate() {
        let mut s = store();
        for id in s.ids() {
            assert_eq!(s.grad(id).dims(), s.value(id).dims());
        }
        let mut g = Gradients::new(2);
        g.add(ParamId(1), &[1.0, 2.0]);
        s.accumulate(&g, 0.5);
        s.accumulate(&g, 0.5);
        assert_eq!(s.grad(ParamId(1)).data(), &[1.0, 2.0]);
        s.zero_grads();
        assert_eq!(s.grad(ParamId(1)).data(), &[0.0, 0.0]);
    }

    #[test]
    fn hash_changes_with_values() {
        let mut s = store();
        let h0 = s.content_hash();
        s.value_mut(ParamId(0)).data_mut()[0] = 2.5;
        assert_ne!(h0, s.content_hash());
    }
}
