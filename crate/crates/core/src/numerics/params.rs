use std::collections::BTreeMap;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    /// Inserts a tensor drawn uniformly from `[-scale, scale]`.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut impl Rng) {
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = rng.random_range(-scale..=scale);
        }
        self.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tensors in name order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.values().cloned().collect()
    }

    /// Replaces all tensors, in name order, keeping shapes.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "expected {} tensors, got {}",
                self.entries.len(),
                tensors.len()
            )));
        }
        for (slot, t) in self.entries.values_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::shape("ParamSet::set_tensors", slot.shape(), t.shape()));
            }
            *slot = t;
        }
        Ok(())
    }

    /// Puts every parameter on `tape`, differentiable when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    /// Vars in name order, matching [`ParamSet::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
