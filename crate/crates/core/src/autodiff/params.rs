use std::collections::HashMap;
use std::sync::Arc;

use super::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Arc<Tensor>,
    pub grad: Tensor,
}

/// Named model parameters. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros(value.shape()),
            value: Arc::new(value),
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape`; those selected by `trainable`
    /// become differentiable leaves, the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(&Parameter) -> bool) -> Bound<'t> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.shared(p.value.clone(), trainable(p)))
                .collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds one gradient per parameter (as produced by [`Bound::collect`]).
    pub fn accumulate(&mut self, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), self.params.len(), "gradient count mismatch");
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let Some(g) = g {
                p.grad.axpy(1.0, g);
            }
        }
    }

    /// Replaces values by name; every stored parameter must be present with
    /// the same shape.
    pub fn assign(&mut self, values: Vec<(String, Tensor)>) -> crate::Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, value) in values {
            let id = *self.by_name.get(&name).ok_or_else(|| {
                crate::Error::Checkpoint(format!("unknown parameter {name:?}"))
            })?;
            let p = &mut self.params[id];
            if p.value.shape() != value.shape() {
                return Err(crate::Error::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, checkpoint has {:?}",
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = Arc::new(value);
            seen[id] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(crate::Error::Checkpoint(format!(
                "checkpoint lacks parameter {:?}",
                self.params[i].name
            )));
        }
        Ok(())
    }
}

/// Parameters recorded on one tape, indexed by [`ParamId`].
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// The tape the parameters were recorded on. Panics for an empty store.
    pub fn tape(&self) -> &'t Tape {
        self.vars.first().expect("no parameters bound").tape()
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Extracts per-parameter gradients in store order.
    pub fn collect(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

impl<'t> std::ops::Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;
    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}
