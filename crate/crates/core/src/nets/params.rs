// SPDX-License-Identifier: Apache-2.0

//! Flat, ordered, named parameter arrays.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Scalar;

pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    He {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Records parameter arrays while an architecture is assembled.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter name {name}"
        );
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    pub fn finish(self) -> Vec<ParamSpec> {
        self.specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    specs: Vec<ParamSpec>,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn zeros(specs: &[ParamSpec]) -> Self {
        ParamStore {
            specs: specs.to_vec(),
            values: specs.iter().map(|s| vec![T::zero(); s.len()]).collect(),
        }
    }

    /// Draws every array from its declared initializer, in order.
    pub fn init<R: Rng>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let mut store = Self::zeros(specs);
        for (spec, vals) in store.specs.iter().zip(store.values.iter_mut()) {
            match spec.init {
                Init::Zeros => {}
                Init::Ones => vals.iter_mut().for_each(|v| *v = T::one()),
                Init::He { fan_in } => {
                    let normal =
                        Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("positive standard deviation");
                    vals.iter_mut().for_each(|v| *v = T::of(normal.sample(rng)));
                }
            }
        }
        store
    }

    /// Builds a store from named arrays that must match `specs` exactly.
    pub fn from_arrays(specs: &[ParamSpec], arrays: Vec<(String, Vec<T>)>) -> Result<Self, String> {
        if arrays.len() != specs.len() {
            return Err(format!("expected {} arrays, found {}", specs.len(), arrays.len()));
        }
        let mut values = Vec::with_capacity(specs.len());
        for (spec, (name, vals)) in specs.iter().zip(arrays) {
            if spec.name != name {
                return Err(format!("expected array {}, found {name}", spec.name));
            }
            if vals.len() != spec.len() {
                return Err(format!(
                    "array {name} has {} values, expected {}",
                    vals.len(),
                    spec.len()
                ));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(format!("array {name} holds non-finite values"));
            }
            values.push(vals);
        }
        Ok(ParamStore {
            specs: specs.to_vec(),
            values,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.specs)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.specs[id].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id]
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.specs
            .iter()
            .zip(&self.values)
            .map(|(s, v)| (s.name.as_str(), v.as_slice()))
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().flatten().for_each(|v| *v = T::zero());
    }

    pub fn scale(&mut self, s: T) {
        self.values.iter_mut().flatten().for_each(|v| *v = *v * s);
    }

    pub fn add_assign(&mut self, other: &ParamStore<T>) {
        assert_eq!(self.specs, other.specs, "parameter layouts differ");
        for (a, b) in self.values.iter_mut().flatten().zip(other.values.iter().flatten()) {
            *a = *a + *b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            specs: self.specs.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::of(x.f64())).collect())
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian `f64` values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (spec, vals) in self.specs.iter().zip(&self.values) {
            h.update(spec.name.as_bytes());
            h.update([0u8]);
            for d in &spec.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in vals {
                h.update(v.f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
