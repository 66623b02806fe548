//! Parameter initialisers.

use alloc::vec::Vec;

use rand::Rng;

use super::{Real, Tensor};

/// Kaiming-uniform with fan-in scaling for a leaky/PReLU unit of negative
/// slope `a`: `U(-b, b)`, `b = sqrt(6 / ((1 + a²)·fan_in))`.
pub fn kaiming_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, a: f64, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / ((1.0 + a * a) * fan_in.max(1) as f64)).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
