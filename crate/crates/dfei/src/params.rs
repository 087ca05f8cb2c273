//! Named trainable parameters partitioned into shared and per-domain groups.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which parameter group a tensor belongs to. The groups partition the
/// trainable set: shared parameters are updated on every domain's step,
/// a domain's own parameters only on that domain's step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Shared,
    Domain(usize),
}

impl Scope {
    pub fn tag(&self) -> String {
        match self {
            Scope::Shared => "shared".to_string(),
            Scope::Domain(d) => format!("domain({d})"),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Scope> {
        if tag == "shared" {
            return Ok(Scope::Shared);
        }
        if let Some(inner) = tag.strip_prefix("domain(").and_then(|s| s.strip_suffix(')')) {
            if let Ok(d) = inner.parse::<usize>() {
                return Ok(Scope::Domain(d));
            }
        }
        Err(Error::Checkpoint(format!("unknown scope tag {tag:?}")))
    }
}

/// One trainable tensor. `is_weight` marks matrices that participate in
/// L2 regularization; biases are excluded.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub scope: Scope,
    pub is_weight: bool,
}

/// All trainable parameters of a model, keyed by name.
///
/// Insertion order is preserved, which keeps optimizer sweeps and
/// checkpoint layouts deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, scope: Scope, is_weight: bool, value: Tensor) {
        let name = name.into();
        debug_assert!(!self.params.contains_key(&name), "duplicate parameter {name}");
        self.params.insert(
            name,
            Param {
                value,
                scope,
                is_weight,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.value)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.get_mut(name).map(|p| &mut p.value)
    }

    /// Replace a parameter's value, keeping shape.
    pub fn set_tensor(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name:?} has shape {:?}, assignment has {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Names belonging to one scope, in insertion order.
    pub fn names_in_scope(&self, scope: Scope) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.scope == scope)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_tags_round_trip() {
        for scope in [Scope::Shared, Scope::Domain(0), Scope::Domain(17)] {
            assert_eq!(Scope::from_tag(&scope.tag()).unwrap(), scope);
        }
        assert!(Scope::from_tag("domain(x)").is_err());
        assert!(Scope::from_tag("global").is_err());
    }

    #[test]
    fn scopes_partition_the_store() {
        let mut store = ParamStore::new();
        store.insert("a", Scope::Shared, true, Tensor::zeros(&[2, 2]));
        store.insert("b", Scope::Domain(0), true, Tensor::zeros(&[2]));
        store.insert("c", Scope::Domain(1), false, Tensor::zeros(&[2]));

        let shared = store.names_in_scope(Scope::Shared);
        let d0 = store.names_in_scope(Scope::Domain(0));
        let d1 = store.names_in_scope(Scope::Domain(1));
        assert_eq!(shared, ["a"]);
        assert_eq!(d0, ["b"]);
        assert_eq!(d1, ["c"]);
        assert_eq!(shared.len() + d0.len() + d1.len(), store.len());
    }
}
