//! Parameter initializers.

use rand::Rng;

use super::{Real, Tensor};

/// He/Kaiming uniform: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(shape, bound, rng)
}

/// `U(-bound, bound)`.
pub fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
