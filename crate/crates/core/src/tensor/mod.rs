//! Dense tensors and a tape-based reverse-mode autodiff graph.
//!
//! [`Tensor`] is a plain value (shape + row-major buffer). Differentiable
//! computation happens on a [`Graph`]: every operation appends a node that
//! owns its output value and remembers its parents, and
//! [`Graph::backward`] walks the tape in reverse insertion order, which is
//! a reverse topological order because parents always precede children.

mod adam;
mod graph;
pub mod init;
pub mod kernels;
mod real;

use alloc::vec;
use alloc::vec::Vec;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Mode, FaultInjection, Graph, OpKind, RunningStats, Var};
pub use kernels::{ConvGeom, Pool2d};
pub use real::Real;

use crate::error::{shape_err, Result};

/// N-dimensional array of `T` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                alloc::format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err("reshape", alloc::format!("{:?} -> {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Rows `start..start+len` along the leading dimension.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Self> {
        let outer = *self.shape.first().ok_or_else(|| shape_err("narrow", "rank 0"))?;
        if start + len > outer {
            return Err(shape_err("narrow", alloc::format!("{}..{} of {}", start, start + len, outer)));
        }
        let inner = self.data.len() / outer.max(1);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self { shape, data: self.data[start * inner..(start + len) * inner].to_vec() })
    }

    /// Concatenates tensors along the leading dimension.
    pub fn stack0(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| shape_err("stack", "no parts"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut outer = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(shape_err("stack", alloc::format!("{:?} vs {:?}", p.shape, first.shape)));
            }
            outer += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = outer;
        Ok(Self { shape, data })
    }
}
