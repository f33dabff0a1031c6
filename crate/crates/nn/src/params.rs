use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// Frozen parameters are skipped by the optimizer.
    pub frozen: bool,
}

/// Named parameter tensors with gradient accumulators.
///
/// Iteration order is the sorted order of names, which keeps optimizer
/// updates and checkpoint layout deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let grad = vec![0.0; value.len()];
        self.params.insert(name, Param { value, grad, frozen: false });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        self.get_mut(name)?.frozen = true;
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
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

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale * grad` to the accumulator of every named gradient.
    pub fn accumulate<'a, I>(&mut self, grads: I, scale: f64) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a [f64])>,
    {
        for (name, g) in grads {
            let p = self.get_mut(name)?;
            if p.grad.len() != g.len() {
                return Err(NnError::ShapeMismatch {
                    op: "accumulate",
                    detail: format!("gradient for `{name}` has {} entries", g.len()),
                });
            }
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self, name: &str) -> Result<f64> {
        Ok(self.get(name)?.grad.iter().map(|g| g * g).sum::<f64>().sqrt())
    }

    /// Names of all parameters whose key starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.params
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.as_str())
    }

    /// CRC32 over names, shapes and values; equal stores hash equal.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (name, p) in &self.params {
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update(&(*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }
}
