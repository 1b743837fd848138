use super::array::{Real, RealArray};
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use std::collections::BTreeMap;

/// One named, shaped tensor. Non-trainable entries (fixed word vectors)
/// are bound to tapes like any other but never receive optimizer updates.
#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub array: RealArray<T>,
    pub trainable: bool,
}

/// Named, shaped arrays holding all weights of a model. Iteration order is
/// the sorted name order, which keeps every sweep over parameters
/// deterministic.
#[derive(Clone, Default)]
pub struct ParameterStore<T: Real> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, array: RealArray<T>) {
        self.entries.insert(
            name.to_string(),
            Param {
                array,
                trainable: true,
            },
        );
    }

    pub fn insert_fixed(&mut self, name: &str, array: RealArray<T>) {
        self.entries.insert(
            name.to_string(),
            Param {
                array,
                trainable: false,
            },
        );
    }

    /// Insert a trainable matrix with uniform Glorot initialization.
    pub fn insert_init(&mut self, name: &str, rows: usize, cols: usize, rng: &mut SeededRng) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<T> = (0..rows * cols)
            .map(|_| T::from_f64(rng.uniform_in(-limit, limit)))
            .collect();
        self.insert(name, RealArray::new(rows, cols, data).expect("valid shape"));
    }

    /// Insert a trainable zero matrix (biases).
    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, RealArray::zeros(rows, cols));
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_trainable_coords(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.array.len())
            .sum()
    }

    pub fn to_f64(&self) -> ParameterStore<f64> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            array: p.array.to_f64(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Bind every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &Tape<T>) -> BoundParams<T> {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), tape.leaf(p.array.clone())))
            .collect();
        BoundParams { vars }
    }
}

impl ParameterStore<f32> {
    pub fn from_f64(store: &ParameterStore<f64>) -> Self {
        ParameterStore {
            entries: store
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            array: p.array.to_f32(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Tape leaves for every parameter of one forward pass.
pub struct BoundParams<T: Real> {
    vars: BTreeMap<String, Var<T>>,
}

impl<T: Real> BoundParams<T> {
    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn var(&self, name: &str) -> Var<T> {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
            .clone()
    }

    /// Collect per-parameter gradients from a backward sweep, in store
    /// order, with zeros for parameters the loss never touched.
    pub fn collect_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, RealArray<T>> {
        self.vars
            .iter()
            .map(|(name, var)| (name.clone(), grads.wrt_or_zeros(var)))
            .collect()
    }
}
