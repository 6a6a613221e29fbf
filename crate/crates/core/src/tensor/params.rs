use std::collections::HashMap;

use super::{Graph, Tensor, Var};
use crate::error::{param_err, Error, Result};

/// A named trainable tensor with an optional accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Ordered collection of named parameters. Order is insertion order and is
/// part of the checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Graph leaves created for a [`ParamSet`] on one tape.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| param_err!("unknown parameter `{name}`"))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(param_err!("duplicate parameter `{name}`"));
        }
        value.ensure_finite(&name)?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter as a `requires_grad` leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> Result<Bindings> {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bindings {
            vars,
            index: self.index.clone(),
        })
    }

    /// Like [`ParamSet::bind`] but as constants, for inference.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Bindings> {
        let vars = self
            .params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bindings {
            vars,
            index: self.index.clone(),
        })
    }

    /// Copies gradients from `g` after a backward pass. Parameters the loss
    /// never reached receive an all-zero gradient.
    pub fn collect_grads(&mut self, g: &Graph, bindings: &Bindings) -> Result<()> {
        if bindings.vars.len() != self.params.len() {
            return Err(Error::State(format!(
                "bindings hold {} vars for {} parameters",
                bindings.vars.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(&bindings.vars) {
            let grad = g
                .grad(v)
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            p.grad = Some(grad);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }
}
