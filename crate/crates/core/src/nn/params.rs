use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name {name}")));
        }
        self.map.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Registers every tensor as a trainable leaf on `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bindings {
        Bindings {
            vars: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v.clone())))
                .collect(),
        }
    }

    /// Gradients for every bound parameter; zeros where none flowed.
    pub fn collect_grads(&self, b: &Bindings, grads: &mut Gradients<T>) -> ParamSet<T> {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, v)| {
                    let g = b
                        .vars
                        .get(k)
                        .and_then(|var| grads.take(*var))
                        .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()));
                    (k.clone(), g)
                })
                .collect(),
        }
    }
}

/// Parameter name to graph variable.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ConfigMismatch(format!("missing parameter {name}")))
    }
}
