//! Named parameter storage with optimizer state.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One trainable array plus its ADAM moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Param {
    fn new(value: Tensor) -> Param {
        let n = value.numel();
        Param { value, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// Insertion-ordered map of named parameters. Iteration order is the
/// registration order, which fixes the update order and keeps training
/// runs reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    order: Vec<String>,
    params: HashMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument(format!("parameter {name:?} already registered")));
        }
        self.order.push(name.to_string());
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    /// Register a convolution weight `[co, ci, kh, kw]` with fan-in-scaled
    /// uniform values in `±sqrt(6 / (ci*kh*kw))`.
    pub fn init_conv(&mut self, name: &str, shape: [usize; 4], rng: &mut ChaCha8Rng) -> Result<()> {
        let fan_in = shape[1] * shape[2] * shape[3];
        self.register(name, uniform_init(shape, fan_in, rng))
    }

    /// Register a transposed-convolution weight `[ci, co, kh, kw]`; fan-in
    /// counts the contraction dimensions `ci*kh*kw`.
    pub fn init_tconv(&mut self, name: &str, shape: [usize; 4], rng: &mut ChaCha8Rng) -> Result<()> {
        let fan_in = shape[0] * shape[2] * shape[3];
        self.register(name, uniform_init(shape, fan_in, rng))
    }

    /// Register a per-channel bias `[1, c, 1, 1]`, zero-initialized.
    pub fn init_bias(&mut self, name: &str, channels: usize) -> Result<()> {
        self.register(name, Tensor::zeros([1, channels, 1, 1]))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    pub(crate) fn entry_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))
    }

    /// Names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn total_values(&self) -> usize {
        self.order.iter().map(|n| self.params[n].value.numel()).sum()
    }

    /// Overwrite a parameter's values, keeping shape (used by loaders).
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.entry_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("{name:?}: stored {:?} vs incoming {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

fn uniform_init(shape: [usize; 4], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data).expect("matching length")
}
