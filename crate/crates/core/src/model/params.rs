use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Buffers such as batch-norm running statistics are stored alongside
    /// weights but are not optimized.
    pub trainable: bool,
}

/// Named, ordered collection of model weights and buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Overwrites every value from `other`, which must describe the same
    /// architecture. Fails on the first name or shape disagreement.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        for p in &self.params {
            let Some((_, t)) = other.iter().find(|(n, _)| *n == p.name) else {
                return Err(Error::Checkpoint(format!("missing parameter `{}`", p.name)));
            };
            if t.shape() != p.value.shape() {
                return Err(Error::ParamShape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if other.len() != self.params.len() {
            let extra = other
                .iter()
                .find(|(n, _)| !self.index.contains_key(n))
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {} (unexpected `{extra}`)",
                other.len(),
                self.params.len()
            )));
        }
        for (name, t) in other {
            let i = self.index[name];
            self.params[i].value = t.clone();
        }
        Ok(())
    }

    pub fn export(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}
