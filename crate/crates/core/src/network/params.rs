//! Named parameter storage and per-pass tape binding.

use crate::autodiff::{Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Model weights and buffers, keyed by name, iterated in insertion order.
///
/// Buffers (running statistics) are saved and loaded like weights but are
/// excluded from optimization and bound as constants during forward passes.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    order: Vec<String>,
    values: HashMap<String, ArrayD<f64>>,
    buffers: HashMap<String, bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        self.insert_inner(name, value, false);
    }

    pub fn insert_buffer(&mut self, name: &str, value: ArrayD<f64>) {
        self.insert_inner(name, value, true);
    }

    fn insert_inner(&mut self, name: &str, value: ArrayD<f64>, buffer: bool) {
        assert!(
            !self.values.contains_key(name),
            "duplicate parameter {name}"
        );
        self.order.push(name.to_string());
        self.values.insert(name.to_string(), value);
        self.buffers.insert(name.to_string(), buffer);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        let slot = self
            .values
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(slot.shape(), value.shape(), "shape change for {name}");
        *slot = value;
    }

    pub fn is_buffer(&self, name: &str) -> bool {
        self.buffers[name]
    }

    /// All names in insertion order (deterministic).
    pub fn names(&self) -> &[String] {
        &self.order
    }

    /// Trainable parameter names in insertion order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.order
            .iter()
            .filter(|n| !self.buffers[*n])
            .cloned()
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.order
            .iter()
            .filter(|n| !self.buffers[*n])
            .map(|n| self.values[n].len())
            .sum()
    }
}

/// He-normal weight init: std = sqrt(2 / fan_in).
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = rand_distr::Normal::new(0.0, std).unwrap();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.sample(normal))
}

/// One forward pass's leaf variables for every stored parameter.
pub struct Binding<'t> {
    vars: HashMap<String, Var<'t>>,
    trainable: Vec<String>,
}

impl<'t> Binding<'t> {
    /// Bind every entry of `store` onto `tape`: weights as leaves, buffers
    /// as constants.
    pub fn bind(tape: &'t Tape, store: &ParamStore) -> Binding<'t> {
        let mut vars = HashMap::new();
        for name in store.names() {
            let var = if store.is_buffer(name) {
                tape.constant(store.get(name).clone())
            } else {
                tape.leaf(store.get(name).clone())
            };
            vars.insert(name.clone(), var);
        }
        Binding {
            vars,
            trainable: store.trainable_names(),
        }
    }

    pub fn var(&self, name: &str) -> Var<'t> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn trainable_names(&self) -> &[String] {
        &self.trainable
    }
}
