use std::collections::HashMap;

use rand::Rng;

use crate::element::Element;
use crate::error::{GradError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param<E> {
    name: String,
    value: Tensor<E>,
    trainable: bool,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E> {
    params: Vec<Param<E>>,
    by_name: HashMap<String, ParamId>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, trainable: true });
        id
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let t = Tensor::from_fn(shape.to_vec(), |_| E::from_f64_lossy(rng.random_range(-bound..=bound)));
        self.insert(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::full(shape.to_vec(), E::one()))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name.get(name).copied().ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.params[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
            n += 1;
        }
        n
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Copies values from `other` for every name both stores share with equal shapes.
    pub fn load_matching(&mut self, other: &ParamStore<E>) -> Result<usize> {
        let mut n = 0;
        for p in &mut self.params {
            if let Some(&id) = other.by_name.get(&p.name) {
                let src = &other.params[id.0].value;
                p.value.same_shape(src)?;
                p.value = src.clone();
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), trainable: p.trainable })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
