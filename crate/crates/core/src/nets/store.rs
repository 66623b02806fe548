use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::tensor::{Real, RunningStats, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: &str, t: Tensor<T>) -> ParamId {
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Everything a network carries between steps: parameters plus batch-norm
/// running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelState<T> {
    pub params: ParamStore<T>,
    pub stats: Vec<(String, RunningStats<T>)>,
}

impl<T: Real> ModelState<T> {
    pub fn new() -> Self {
        Self { params: ParamStore::new(), stats: Vec::new() }
    }

    pub fn add_stats(&mut self, name: &str, channels: usize) -> usize {
        self.stats.push((name.to_string(), RunningStats::new(channels)));
        self.stats.len() - 1
    }

    /// Same layout, different precision.
    pub fn cast<U: Real>(&self) -> ModelState<U> {
        let mut params = ParamStore::new();
        for (n, t) in self.params.names().iter().zip(self.params.tensors()) {
            params.add(n, t.cast());
        }
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let stats = self
            .stats
            .iter()
            .map(|(n, s)| (n.clone(), RunningStats { mean: conv(&s.mean), var: conv(&s.var), tracked: s.tracked }))
            .collect();
        ModelState { params, stats }
    }
}
