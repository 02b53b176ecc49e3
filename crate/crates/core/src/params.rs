//! Named parameter storage.
//!
//! Layers register their tensors in a [`ParamStore`] under dotted names at
//! construction time. A forward pass binds the whole store to a tape with
//! [`ParamStore::bind`] and looks parameters up by name.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{init, Tape, Tensor, Var};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::invalid(format!("parameter {name} registered twice")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    /// Replaces an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape { op: "ParamStore::set", lhs: slot.shape().to_vec(), rhs: value.shape().to_vec() });
        }
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Zeroes every parameter whose name satisfies `pred`.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) -> usize {
        let mut n = 0;
        for (name, t) in self.tensors.iter_mut() {
            if pred(name) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
                n += 1;
            }
        }
        n
    }

    /// Registers every parameter as a gradient-receiving leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.var(v.clone()))).collect(),
        }
    }

    /// Like [`bind`](Self::bind) but as constants (no gradients recorded).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))).collect(),
        }
    }
}

/// A [`ParamStore`] bound to a tape.
pub struct Bound<'t> {
    vars: IndexMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Substitutes `var` for parameter `name` (same shape).
    pub fn replace(&mut self, name: &str, var: Var<'t>) -> Result<()> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        if slot.shape() != var.shape() {
            return Err(Error::Shape { op: "Bound::replace", lhs: slot.shape(), rhs: var.shape() });
        }
        *slot = var;
        Ok(())
    }
}

/// Registration helper that prefixes names and draws initial values.
pub struct Builder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<'a, R: Rng> Builder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self { store, rng }
    }

    /// Truncated normal, std [`INIT_STD`].
    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<String> {
        let t = init::trunc_normal(shape.to_vec(), INIT_STD, self.rng);
        self.store.insert(name, t)?;
        Ok(name.to_string())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<String> {
        self.store.insert(name, Tensor::zeros(shape.to_vec()))?;
        Ok(name.to_string())
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<String> {
        self.store.insert(name, Tensor::ones(shape.to_vec()))?;
        Ok(name.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros([1])).unwrap();
        assert!(s.insert("a", Tensor::zeros([1])).is_err());
        assert!(s.set("a", Tensor::zeros([2])).is_err());
        assert!(s.set("b", Tensor::zeros([1])).is_err());
    }

    #[test]
    fn bound_lookup() {
        let mut s = ParamStore::new();
        s.insert("x.w", Tensor::ones([2])).unwrap();
        let tape = Tape::new();
        let b = s.bind(&tape);
        assert!(b.get("x.w").unwrap().requires_grad());
        assert!(b.get("nope").is_err());
        assert!(!s.bind_frozen(&tape).get("x.w").unwrap().requires_grad());
    }
}
