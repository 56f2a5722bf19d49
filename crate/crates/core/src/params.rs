//! Named parameter storage and its binding onto a tape.

use rand::Rng as _;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Seeded generator used everywhere randomness is needed: xoshiro256++
/// seeded through SplitMix64, so streams are identical on every platform.
pub type SeededRng = Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> SeededRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Parameter(format!("duplicate parameter name {name}")));
        }
        self.entries.push((name, value));
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Replaces every value with the same-named tensor from `other`.
    /// Both stores must hold exactly the same names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Parameter(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, value) in &mut self.entries {
            let id = other
                .find(name)
                .ok_or_else(|| Error::Parameter(format!("missing parameter {name}")))?;
            let src = other.get(id);
            if src.shape() != value.shape() {
                return Err(Error::shape("assign_from", value.shape(), src.shape()));
            }
            *value = src.clone();
        }
        Ok(())
    }
}

/// Parameters of a [`ParamStore`] recorded as leaves of one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    /// Binds every parameter. `requires_grad` selects training vs inference.
    pub fn all(tape: &mut Tape, store: &ParamStore, requires_grad: bool) -> Self {
        let vars = store
            .entries
            .iter()
            .map(|(_, t)| Some(tape.leaf(t.clone(), requires_grad)))
            .collect();
        Self { vars }
    }

    /// Binds only `ids`; other parameters stay unbound.
    pub fn subset(tape: &mut Tape, store: &ParamStore, ids: &[ParamId], requires_grad: bool) -> Self {
        let mut vars = vec![None; store.len()];
        for &id in ids {
            if vars[id.0].is_none() {
                vars[id.0] = Some(tape.leaf(store.get(id).clone(), requires_grad));
            }
        }
        Self { vars }
    }

    /// The tape handle of `id`. Panics when `id` was not bound, which is a
    /// wiring bug rather than a data error.
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].unwrap_or_else(|| panic!("parameter #{} is not bound", id.0))
    }

    pub fn get(&self, id: ParamId) -> Option<Var> {
        self.vars.get(id.0).copied().flatten()
    }
}

/// Uniform in `[-bound, bound]`.
pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut SeededRng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

/// Xavier/Glorot uniform for an `out×in` weight.
pub fn xavier(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(1, 1)).unwrap();
        assert!(s.add("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn rng_is_reproducible() {
        let a = uniform(3, 3, 0.1, &mut seeded_rng(7));
        let b = uniform(3, 3, 0.1, &mut seeded_rng(7));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn xavier_bound() {
        let w = xavier(4, 8, &mut seeded_rng(1));
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }
}
