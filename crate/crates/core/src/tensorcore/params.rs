use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable tensors, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let t = Tensor::from_fn(shape.to_vec(), |_| normal.sample(rng));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    /// Replaces values from `(name, tensor)` entries; names and shapes must match exactly.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Format {
                field: "checkpoint",
                detail: format!("expected {} parameters, found {}", self.len(), entries.len()),
            });
        }
        for (name, t) in entries {
            let i = *self.index.get(&name).ok_or_else(|| Error::Format {
                field: "checkpoint",
                detail: format!("unknown parameter {name}"),
            })?;
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::Format {
                    field: "checkpoint",
                    detail: format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        self.tensors[i].shape()
                    ),
                });
            }
            self.tensors[i] = t.with_requires_grad(true);
        }
        Ok(())
    }
}

/// Tape handles of a bound [`ParamStore`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    /// Per-parameter gradients in store order (zeros where none flowed).
    pub fn grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .zip(&store.tensors)
            .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
            .collect()
    }
}
