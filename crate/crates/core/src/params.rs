//! Named parameter storage shared by the model, the optimiser and the archive writer.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered list of named matrices. Insertion order is the archive order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-initialised parameter drawn from a stream keyed by `(seed, name)`,
    /// so adding or removing other groups never shifts this one's values.
    pub fn add_glorot(&mut self, seed: u64, name: &str, rows: usize, cols: usize) -> ParamId {
        let mut rng = ChaCha8Rng::seed_from_u64(rng::derive(seed, name));
        self.add(name, Matrix::glorot(rows, cols, &mut rng))
    }

    pub fn add_uniform(&mut self, seed: u64, name: &str, rows: usize, cols: usize, limit: f64) -> ParamId {
        let mut rng = ChaCha8Rng::seed_from_u64(rng::derive(seed, name));
        self.add(name, Matrix::uniform(rows, cols, limit, &mut rng))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replace the value of an existing parameter, keeping its shape contract.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<(), crate::Error> {
        let id = self.id(name).ok_or_else(|| crate::Error::MissingParam(name.into()))?;
        let current = &self.values[id.0];
        if current.shape() != value.shape() {
            return Err(crate::Error::Shape {
                what: name.into(),
                expected: current.shape(),
                found: value.shape(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    slots: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn new(n: usize) -> Self {
        Grads { slots: (0..n).map(|_| None).collect() }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.slots[id.0].as_ref()
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        self.slots[id.0].as_mut()
    }

    pub fn clear(&mut self, id: ParamId) {
        self.slots[id.0] = None;
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        crate::math::sqrt(self.slots.iter().flatten().map(Matrix::sq_norm).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(Matrix::is_finite)
    }
}
