//! Weight initializers.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform samples in `[-bound, bound]`.
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("shape/product agree")
}

/// He/Kaiming uniform bound for ReLU networks: `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Glorot-style bound over all Q weight banks of a generative-neuron layer:
/// `sqrt(6 / (cin*k^2*q + cout*k^2))`.
pub fn selfonn_bound(q_order: usize, cout: usize, cin: usize, k: usize) -> f64 {
    let k2 = (k * k) as f64;
    (6.0 / (cin as f64 * k2 * q_order as f64 + cout as f64 * k2)).sqrt()
}
