use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AvsError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Named parameter tensors, keyed `module.stage.layer.weight` style.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors.get(name).ok_or_else(|| AvsError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.tensors.get_mut(name).ok_or_else(|| AvsError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// He-style fan-in normal initialization.
    pub fn init_he(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        self.init_normal(name, shape, std, rng);
    }

    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| S::lit(dist.sample(rng)));
        self.insert(name, t);
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }
}

impl<S> IntoIterator for ParamStore<S> {
    type Item = (String, Tensor<S>);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor<S>>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.into_iter()
    }
}

impl<S> FromIterator<(String, Tensor<S>)> for ParamStore<S> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<S>)>>(iter: I) -> Self {
        Self { tensors: iter.into_iter().collect() }
    }
}
