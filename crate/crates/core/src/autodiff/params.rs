use std::collections::BTreeMap;
use std::ops::Range;

use crate::autodiff::tensor::for_each_slice_row;
use crate::{Scalar, Tensor};

/// A trainable tensor with its gradient buffer.
///
/// `touched` marks the elements that received a gradient since the last
/// optimizer step; untouched elements are left alone by [`Adam`](super::Adam)
/// so a single-path update never moves weights outside the sampled slice.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    grad: Vec<T>,
    touched: Vec<bool>,
}

impl<T: Scalar> Param<T> {
    fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![T::zero(); n],
            touched: vec![false; n],
        }
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn touched(&self) -> &[bool] {
        &self.touched
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Tensor<T>, &mut [T], &mut [bool]) {
        (&mut self.value, &mut self.grad, &mut self.touched)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
        self.touched.iter_mut().for_each(|t| *t = false);
    }
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    /// Panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.params.insert(name, Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn param(&self, name: &str) -> &Param<T> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param<T> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.param(name).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        &mut self.param_mut(name).value
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn num_elements_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Param::zero_grad);
    }

    /// Adds `grad` (shaped like the slice) into the gradient of `name` at `ranges`.
    pub fn accumulate(&mut self, name: &str, ranges: &[Range<usize>], grad: &[T]) {
        let p = self.param_mut(name);
        let shape = p.value.shape().to_vec();
        let row = ranges[ranges.len() - 1].len();
        let mut k = 0;
        for_each_slice_row(&shape, ranges, |dst| {
            for j in 0..row {
                p.grad[dst + j] += grad[k + j];
                p.touched[dst + j] = true;
            }
            k += row;
        });
    }

    /// Moves every parameter whose name starts with `prefix` into a new store.
    pub fn split_off_prefix(&mut self, prefix: &str) -> ParamStore<T> {
        let keys: Vec<String> = self
            .params
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        let mut out = ParamStore::new();
        for k in keys {
            let p = self.params.remove(&k).expect("key listed");
            out.params.insert(k, p);
        }
        out
    }

    /// Inserts all parameters of `other`; panics on name collisions.
    pub fn merge(&mut self, other: ParamStore<T>) {
        for (k, p) in other.params {
            assert!(!self.params.contains_key(&k), "duplicate parameter name {k}");
            self.params.insert(k, p);
        }
    }

    /// True when every value is bitwise equal to `other`'s (names and shapes included).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
            })
    }
}
