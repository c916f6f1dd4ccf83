use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Which part of the model a parameter belongs to, read from its name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// `theta.*`: feature extractor and generator.
    Shared,
    /// `phi.*`: amortization network.
    Amortization,
    /// `psi0.*`: one-step-gradient initialization.
    BaselineInit,
}

impl Role {
    pub fn of(name: &str) -> Result<Role> {
        match name.split('.').next() {
            Some("theta") => Ok(Role::Shared),
            Some("phi") => Ok(Role::Amortization),
            Some("psi0") => Ok(Role::BaselineInit),
            _ => Err(Error::contract(format!("parameter `{name}` has no role prefix"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Role::Shared => "theta",
            Role::Amortization => "phi",
            Role::BaselineInit => "psi0",
        }
    }
}

/// Named parameter tensors in a fixed (lexicographic) order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        Role::of(&name)?;
        if self.entries.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dimension("set_parameter", &[slot.shape(), value.shape()]));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar parameter count for one role.
    pub fn count(&self, role: Role) -> usize {
        self.iter()
            .filter(|(n, _)| Role::of(n).ok() == Some(role))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Checks every name carries a role prefix (for deserialized stores).
    pub fn validate(&self) -> Result<()> {
        for (name, t) in self.iter() {
            Role::of(name)?;
            if !t.is_finite() {
                return Err(Error::domain("parameters", format!("`{name}` is not finite")));
            }
        }
        Ok(())
    }

    /// Adds every parameter to `g`: roles in `trainable` as leaves, the rest
    /// as constants.
    pub fn load(&self, g: &mut Graph, trainable: &[Role]) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|(name, t)| {
                let role = Role::of(name).unwrap_or(Role::Shared);
                let v = if trainable.contains(&role) {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    /// `N(0, 1/fan_in)` weights and zero biases for a dense layer.
    pub(crate) fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<()> {
        let std = (1.0 / fan_in.max(1) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| std * rng.standard_normal()).collect();
        self.insert(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], w)?)?;
        self.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]))
    }
}

/// Graph handles for a loaded [`ParameterStore`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Pairs names with existing graph nodes.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` not loaded")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
